"""HTTP facade over the operation layer.

Run with: uvicorn cvxq.service.app:app
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from . import ops
from .schemas import (
    DiagnoseRequest,
    DiagnoseResponse,
    DualAuditRequest,
    DualAuditResponse,
    LqrCompareRequest,
    LqrCompareResponse,
    TrainRequest,
    TrainResponse,
    ValidateRequest,
    ValidateResponse,
)

app = FastAPI(title="cvxq", version=__version__)


def _guard(fn, req):
    try:
        return fn(req)
    except (ValueError, RuntimeError) as err:
        raise HTTPException(status_code=400, detail=str(err)) from err


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/train", response_model=TrainResponse)
def train(req: TrainRequest) -> TrainResponse:
    return _guard(ops.run_train, req)


@app.post("/validate", response_model=ValidateResponse)
def validate(req: ValidateRequest) -> ValidateResponse:
    return _guard(ops.run_validate, req)


@app.post("/diagnose", response_model=DiagnoseResponse)
def diagnose(req: DiagnoseRequest) -> DiagnoseResponse:
    return _guard(ops.run_diagnose, req)


@app.post("/dual-audit", response_model=DualAuditResponse)
def dual_audit(req: DualAuditRequest) -> DualAuditResponse:
    return _guard(ops.run_dual_audit, req)


@app.post("/lqr-compare", response_model=LqrCompareResponse)
def lqr_compare(req: LqrCompareRequest) -> LqrCompareResponse:
    return _guard(ops.run_lqr_compare, req)
