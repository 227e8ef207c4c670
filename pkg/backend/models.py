import json
import math
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, field_validator

from errors import FavorError
from features import DEParams, Family, GEParams, SADEParams
from solvers import FitReport

SCHEMA_VERSION = 1
OVERFLOW = "overflow"


def _finite_or_overflow(value: Any) -> Any:
    if isinstance(value, (float, int, np.floating, np.integer)) and not isinstance(value, bool):
        value = float(value)
        return value if math.isfinite(value) else OVERFLOW
    return value


class ResultRecord(BaseModel):
    """One metric value of one experiment cell"""

    mechanism: str  # Registry name, or "exact"
    M: int  # Random features (0 for exact baselines)
    sigma: Optional[float] = None  # Data scale of the cell
    metric: str  # e.g. "mean_log_rel_var", "accuracy", "attention_error"
    value: Union[float, str]  # Non-finite values become "overflow"
    seed: int
    L: Optional[int] = None  # Sequence length (attention benchmark)

    @field_validator("value", mode="before")
    @classmethod
    def _mark_overflow(cls, v):
        return _finite_or_overflow(v)


class ErrorRecord(BaseModel):
    """Structured failure emitted instead of records"""

    type: str  # Exception class name
    message: str
    exit_code: int

    @classmethod
    def from_exception(cls, e: Exception) -> "ErrorRecord":
        code = e.exit_code if isinstance(e, FavorError) else 1
        return cls(type=type(e).__name__, message=str(e), exit_code=code)


class GEParamsModel(BaseModel):
    a: float
    b: float
    c: float
    log_d_coeff: float
    d_dim: int

    @classmethod
    def from_params(cls, p: GEParams) -> "GEParamsModel":
        return cls(a=p.a, b=p.b, c=p.c, log_d_coeff=p.log_d_coeff, d_dim=p.d_dim)

    def to_params(self) -> GEParams:
        return GEParams(
            a=self.a, b=self.b, c=self.c, log_d_coeff=self.log_d_coeff, d_dim=self.d_dim
        )


class SADEParamsModel(BaseModel):
    psi: List[float]
    ge: GEParamsModel

    @classmethod
    def from_params(cls, p: SADEParams) -> "SADEParamsModel":
        return cls(psi=p.psi.tolist(), ge=GEParamsModel.from_params(p.ge))

    def to_params(self) -> SADEParams:
        return SADEParams(psi=np.array(self.psi), ge=self.ge.to_params())


class DEParamsModel(BaseModel):
    a_diag: List[float]
    b1: List[List[float]]
    b2: List[List[float]]
    c1: List[List[float]]
    c2: List[List[float]]
    log_det_d: float

    @classmethod
    def from_params(cls, p: DEParams) -> "DEParamsModel":
        return cls(
            a_diag=p.a_diag.tolist(),
            b1=p.b1.tolist(),
            b2=p.b2.tolist(),
            c1=p.c1.tolist(),
            c2=p.c2.tolist(),
            log_det_d=p.log_det_d,
        )

    def to_params(self) -> DEParams:
        """Rebuild and re-validate the unbiasedness conditions"""
        params = DEParams(
            a_diag=np.array(self.a_diag, dtype=float),
            b1=np.array(self.b1, dtype=float),
            b2=np.array(self.b2, dtype=float),
            c1=np.array(self.c1, dtype=float),
            c2=np.array(self.c2, dtype=float),
            log_det_d=self.log_det_d,
        )
        params.check_constraints()
        return params


class FitReportModel(BaseModel):
    family: str
    phi: float
    objective_value: float
    sigma_diag: Optional[List[float]] = None
    lam3: Optional[List[float]] = None
    psi: Optional[List[float]] = None
    ridge: bool = False

    @classmethod
    def from_report(cls, r: FitReport) -> "FitReportModel":
        def as_list(v):
            return None if v is None else np.asarray(v).tolist()

        return cls(
            family=r.family,
            phi=r.phi,
            objective_value=r.objective_value,
            sigma_diag=as_list(r.sigma_diag),
            lam3=as_list(r.lam3),
            psi=as_list(r.psi),
            ridge=r.ridge,
        )


class FitDump(BaseModel):
    """Fitted parameters of one mechanism in a reloadable form"""

    mechanism: str
    family: str
    ge: Optional[GEParamsModel] = None
    sade: Optional[SADEParamsModel] = None
    de: Optional[DEParamsModel] = None
    report: Optional[FitReportModel] = None

    @classmethod
    def from_fitted(cls, fitted) -> "FitDump":
        mech = fitted.mechanism
        params = mech.params
        return cls(
            mechanism=mech.label,
            family=mech.family.value,
            ge=GEParamsModel.from_params(params) if isinstance(params, GEParams) else None,
            sade=SADEParamsModel.from_params(params) if isinstance(params, SADEParams) else None,
            de=DEParamsModel.from_params(params) if isinstance(params, DEParams) else None,
            report=None if fitted.report is None else FitReportModel.from_report(fitted.report),
        )

    def to_params(self) -> Union[GEParams, SADEParams, DEParams, None]:
        family = Family(self.family)
        if family is Family.GE and self.ge is not None:
            return self.ge.to_params()
        if family is Family.SADE and self.sade is not None:
            return self.sade.to_params()
        if family is Family.DE and self.de is not None:
            return self.de.to_params()
        return None


class ExperimentResult(BaseModel):
    """Machine-readable result of one harness command"""

    schema_version: int = SCHEMA_VERSION
    command: str
    config: Dict[str, Any] = {}
    records: List[ResultRecord] = []
    parameters: Optional[FitDump] = None
    error: Optional[ErrorRecord] = None

    def to_json(self) -> str:
        """Deterministic JSON: sorted keys, shortest round-trip floats"""
        return json.dumps(self.model_dump(mode="json", exclude_none=True), indent=2, sort_keys=True)

    def records_frame(self) -> pd.DataFrame:
        columns = list(ResultRecord.model_fields)
        return pd.DataFrame([r.model_dump() for r in self.records], columns=columns)
