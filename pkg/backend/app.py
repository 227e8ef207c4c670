import logging
from typing import List, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from attention import AttentionBatch, attention_error, exact_attention, rf_attention
from config import config
from dataio import Regime
from errors import FavorError
from experiments import ExperimentRunner, qmc_correlation
from kernelcore import PointSet
from linalg import DrawScheme, make_rng
from mechanisms import fit_for_attention
from models import ExperimentResult, FitDump

logging.basicConfig(level=config.LOG_LEVEL)
logger = logging.getLogger(__name__)

# Initialize FastAPI app
app = FastAPI(title="FAVOR# random features", root_path="")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Initialize experiment runner
runner = ExperimentRunner(config)


# Pydantic models for request/response
class MechanismInfo(BaseModel):
    """Registry entry"""

    name: str
    description: str
    fitted: bool


class FitRequest(BaseModel):
    """Request model for fitting one mechanism"""

    mechanism: str
    x: List[List[float]]
    y: Optional[List[List[float]]] = None  # defaults to x


class VarianceRequest(BaseModel):
    """Request model for a synthetic variance comparison"""

    mechs: List[str]
    sigmas: List[float]
    regime: Regime = Regime.NORMAL
    d: int = 8
    L: int = 64
    set_pairs: int = 5
    seed: int = 0


class AttentionRequest(BaseModel):
    """Request model for one attention approximation"""

    q: List[List[float]]
    k: List[List[float]]
    v: List[List[float]]
    mechanism: str = "sderf"
    M: int = config.DEFAULT_M
    seed: int = 0
    scheme: DrawScheme = DrawScheme.IID
    qmc_psi: Optional[float] = None


class AttentionResponse(BaseModel):
    """Approximate and exact attention outputs"""

    output: List[List[float]]
    exact: List[List[float]]
    error: float  # relative Frobenius error
    min_denominator: float


def _http_error(e: Exception) -> HTTPException:
    if isinstance(e, FavorError):
        return HTTPException(status_code=e.status_code, detail=f"{type(e).__name__}: {e}")
    return HTTPException(status_code=500, detail=str(e))


# API Endpoints


@app.get("/api/mechanisms", response_model=List[MechanismInfo])
async def list_mechanisms():
    """List every registered mechanism"""
    return [MechanismInfo(**d) for d in runner.registry.get_definitions()]


@app.post("/api/fit", response_model=FitDump)
async def fit_mechanism(request: FitRequest):
    """Fit a mechanism on the given points and return its parameters"""
    try:
        xs = PointSet.of(request.x)
        ys = PointSet.of(request.y) if request.y is not None else xs
        result = runner.fit_dump(request.mechanism, xs, ys)
        return result.parameters
    except Exception as e:
        raise _http_error(e)


@app.post("/api/variance", response_model=ExperimentResult)
async def compare_variance(request: VarianceRequest):
    """Mean log relative variance per mechanism and sigma"""
    try:
        return runner.variance_compare(
            mechs=request.mechs,
            sigmas=request.sigmas,
            regime=request.regime,
            d=request.d,
            l=request.L,
            set_pairs=request.set_pairs,
            seed=request.seed,
        )
    except Exception as e:
        raise _http_error(e)


@app.post("/api/attention", response_model=AttentionResponse)
async def approximate_attention(request: AttentionRequest):
    """Random-feature attention against the exact softmax"""
    try:
        batch = AttentionBatch(
            q=np.asarray(request.q, dtype=float),
            k=np.asarray(request.k, dtype=float),
            v=np.asarray(request.v, dtype=float),
        )
        corr = qmc_correlation(request.scheme, request.qmc_psi, request.M, batch.dim)
        mech = fit_for_attention(
            batch, request.mechanism, runner.registry, request.scheme, corr
        ).mechanism
        output, diagnostics = rf_attention(batch, mech, request.M, make_rng(request.seed))
        exact = exact_attention(batch)
        return AttentionResponse(
            output=output.tolist(),
            exact=exact.tolist(),
            error=attention_error(exact, output),
            min_denominator=diagnostics.min_denominator,
        )
    except Exception as e:
        raise _http_error(e)
