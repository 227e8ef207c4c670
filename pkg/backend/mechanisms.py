import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

from attention import AttentionBatch
from errors import UnsupportedFamily
from features import Family, Mechanism
from kernelcore import MomentStats, moment_stats
from linalg import DrawScheme
from qmc import QmcCorrelation
from solvers import FitReport, fit_aderf, fit_arf, fit_gerf, fit_saderf, fit_sderf

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FittedMechanism:
    """A mechanism plus the solver report that produced it (None when nothing is fitted)"""

    mechanism: Mechanism
    report: Optional[FitReport] = None


class MechanismBuilder(ABC):
    """Abstract base class for named feature mechanisms"""

    name: str = ""
    description: str = ""
    fitted: bool = True

    def get_definition(self) -> Dict[str, Any]:
        """Return the public description of this mechanism"""
        return {"name": self.name, "description": self.description, "fitted": self.fitted}

    @abstractmethod
    def build(
        self,
        stats: MomentStats,
        scheme: DrawScheme = DrawScheme.IID,
        qmc: Optional[QmcCorrelation] = None,
    ) -> FittedMechanism:
        """Fit on the moment statistics and wrap the result as a mechanism"""
        pass


class TrigBuilder(MechanismBuilder):
    name = "trig"
    description = "Trigonometric random features (signed, no analytic variance)"
    fitted = False

    def build(self, stats, scheme=DrawScheme.IID, qmc=None) -> FittedMechanism:
        return FittedMechanism(Mechanism(Family.TRIG, None, scheme, qmc, name=self.name))


class PosBuilder(MechanismBuilder):
    name = "pos"
    description = "Positive random features exp(w.x - |x|^2 / 2)"
    fitted = False

    def build(self, stats, scheme=DrawScheme.IID, qmc=None) -> FittedMechanism:
        return FittedMechanism(Mechanism(Family.POS, None, scheme, qmc, name=self.name))


class GerfBuilder(MechanismBuilder):
    name = "gerf"
    description = "Generalized exponential features with the optimal scalar A"

    def build(self, stats, scheme=DrawScheme.IID, qmc=None) -> FittedMechanism:
        params, report = fit_gerf(stats)
        return FittedMechanism(Mechanism(Family.GE, params, scheme, qmc, name=self.name), report)


class SaderfBuilder(MechanismBuilder):
    name = "saderf"
    description = "GE features on diagonally rescaled inputs (Psi x, Psi^-1 y)"

    def build(self, stats, scheme=DrawScheme.IID, qmc=None) -> FittedMechanism:
        params, report = fit_saderf(stats)
        return FittedMechanism(Mechanism(Family.SADE, params, scheme, qmc, name=self.name), report)


class AderfBuilder(MechanismBuilder):
    name = "aderf"
    description = "Asymmetric dense-exponential features (needs nonsingular moments)"

    def __init__(self, ridge: bool = False, ridge_eps: float = 1e-8):
        self.ridge = ridge
        self.ridge_eps = ridge_eps

    def build(self, stats, scheme=DrawScheme.IID, qmc=None) -> FittedMechanism:
        params, report = fit_aderf(stats, ridge=self.ridge, ridge_eps=self.ridge_eps)
        return FittedMechanism(Mechanism(Family.DE, params, scheme, qmc, name=self.name), report)


class SderfBuilder(MechanismBuilder):
    name = "sderf"
    description = "Symmetric dense-exponential features from the spectrum of the pair moments"

    def build(self, stats, scheme=DrawScheme.IID, qmc=None) -> FittedMechanism:
        params, report = fit_sderf(stats)
        return FittedMechanism(Mechanism(Family.DE, params, scheme, qmc, name=self.name), report)


class ArfBuilder(MechanismBuilder):
    name = "arf"
    description = "GE features after the first-order asymmetric input transform"

    def __init__(self, canonical: bool = True, diagonal: bool = False):
        self.canonical = canonical
        self.diagonal = diagonal

    def build(self, stats, scheme=DrawScheme.IID, qmc=None) -> FittedMechanism:
        params, report = fit_arf(stats, canonical=self.canonical, diagonal=self.diagonal)
        return FittedMechanism(Mechanism(Family.DE, params, scheme, qmc, name=self.name), report)


class MechanismRegistry:
    """Named mechanism builders"""

    def __init__(self):
        self.builders: Dict[str, MechanismBuilder] = {}

    def register_builder(self, builder: MechanismBuilder):
        """Register any builder that implements the MechanismBuilder interface"""
        if not builder.name:
            raise ValueError("Mechanism builder must have a name")
        self.builders[builder.name] = builder

    def names(self) -> List[str]:
        return list(self.builders)

    def get_definitions(self) -> List[Dict[str, Any]]:
        return [b.get_definition() for b in self.builders.values()]

    def build(
        self,
        name: str,
        stats: MomentStats,
        scheme: DrawScheme = DrawScheme.IID,
        qmc: Optional[QmcCorrelation] = None,
    ) -> FittedMechanism:
        """Build a mechanism by name"""
        if name not in self.builders:
            known = ", ".join(self.builders)
            raise UnsupportedFamily(f"unknown mechanism {name!r}; known: {known}")
        fitted = self.builders[name].build(stats, scheme, qmc)
        if fitted.report is not None:
            report = fitted.report
            logger.debug("%s: phi=%.6g objective=%.6g", name, report.phi, report.objective_value)
        return fitted


def default_registry(config=None) -> MechanismRegistry:
    """Registry with every supported mechanism"""
    ridge = bool(config.ADERF_RIDGE) if config is not None else False
    ridge_eps = float(config.RIDGE_EPS) if config is not None else 1e-8

    registry = MechanismRegistry()
    for builder in (
        TrigBuilder(),
        PosBuilder(),
        GerfBuilder(),
        SaderfBuilder(),
        AderfBuilder(ridge=ridge, ridge_eps=ridge_eps),
        SderfBuilder(),
        ArfBuilder(),
    ):
        registry.register_builder(builder)
    return registry


def fit_for_attention(
    batch: AttentionBatch,
    name: str,
    registry: Optional[MechanismRegistry] = None,
    scheme: DrawScheme = DrawScheme.IID,
    qmc: Optional[QmcCorrelation] = None,
) -> FittedMechanism:
    """Fit a mechanism on the d^-1/4-scaled queries and keys of a batch"""
    registry = registry or default_registry()
    xs, ys = batch.scaled_sets()
    return registry.build(name, moment_stats(xs, ys), scheme, qmc)
