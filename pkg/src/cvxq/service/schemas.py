"""Request/response models shared by the HTTP service and the CLI client."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from ..harness import ExperimentConfig

__all__ = [
    "TrainRequest",
    "TrainResponse",
    "ValidateRequest",
    "ValidateResponse",
    "DiagnoseRequest",
    "DiagnoseResponse",
    "DualAuditRequest",
    "DualAuditResponse",
    "LqrCompareRequest",
    "LqrCompareResponse",
]


class TrainRequest(BaseModel):
    config: ExperimentConfig
    seed: Optional[int] = None
    episodes: Optional[int] = None
    runs: Optional[int] = None
    out: Optional[str] = None
    workers: int = 1


class TrainResponse(BaseModel):
    seed: int
    episodes: int
    runs: int
    final_theta_norm: float
    final_reward: float
    theta: Optional[list[float]] = None  # single-run only
    reward_percentiles: Optional[dict] = None  # multi-run only
    out_dir: Optional[str] = None


class ValidateRequest(BaseModel):
    config: ExperimentConfig
    theta: Optional[list[float]] = None
    theta_path: Optional[str] = None
    runs: Optional[int] = None
    seed: Optional[int] = None


class ValidateResponse(BaseModel):
    reward: float
    episode_rewards: list[float]
    goal_hits: int


class DiagnoseRequest(BaseModel):
    config: ExperimentConfig
    episodes: Optional[int] = None
    seed: Optional[int] = None
    out: Optional[str] = None


class DiagnoseResponse(BaseModel):
    covariance: dict
    verdict: dict
    n_segments: int
    out_path: Optional[str] = None


class DualAuditRequest(BaseModel):
    config: ExperimentConfig
    seed: Optional[int] = None
    out: Optional[str] = None


class DualAuditResponse(BaseModel):
    n_segments: int
    primal_objective: float
    dual_objective: float
    gap: float
    relative_gap: float
    kkt_passed: bool
    slackness_findings: list = Field(default_factory=list)
    occupancy_supported: bool = False
    occupancy: Optional[dict] = None
    out_path: Optional[str] = None


class LqrCompareRequest(BaseModel):
    episodes: int = 20
    steps_per_episode: int = 25
    dt: float = 0.1
    n_actions: int = 41
    u_max: float = 3.0
    watkins_iters: int = 100_000
    watkins_alpha: float = 1e-3
    watkins_inits: Optional[list[list[float]]] = None
    seed: int = 0
    out: Optional[str] = None


class LqrCompareResponse(BaseModel):
    theta_convex: list[float]
    theta_oracle: list[float]
    max_relative_error: float
    watkins: list[dict]
    out_dir: Optional[str] = None
