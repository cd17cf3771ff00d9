"""Pydantic request/response models of the lab service."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class RunRequest(BaseModel):
    """Start a flow run.

    Either an inline flat config mapping or the text of a key-value config
    file; ``out_dir`` is a server-side directory receiving monitors,
    snapshots and the manifest.
    """

    config: Optional[dict[str, Any]] = None
    config_text: Optional[str] = None
    out_dir: str


class RunResponse(BaseModel):
    run_id: str
    out_dir: str
    stop_reason: str
    t_end: float
    t_sing: Optional[float] = None
    t_sing_sigma: Optional[float] = None
    b_tip_final: float
    n_snapshots: int
    class_i_member: bool
    boundary_contaminated: bool
    margin_minima: dict[str, dict[str, float]]
    files: list[str]


class AnalyzeRequest(BaseModel):
    """Analyze a stored trajectory directory (server-side path)."""

    trajectory_dir: str
    out_dir: Optional[str] = None
    eh_window: tuple[float, float] = (0.0, 5.0)
    eh_levels: list[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05])
    residual_laws: list[str] = Field(default_factory=list)
    theta: float = 0.5
    tol_ineq: float = 1e-6
    track: str = "tip"


class AnalyzeResponse(BaseModel):
    singularity: dict[str, Any]
    inequality_margins: dict[str, Any]
    curvature_bound: dict[str, Any]
    blowup: dict[str, Any]
    eh_distance: list[dict[str, Any]]
    residuals: list[dict[str, Any]]
    files: list[str]


class CertifyRequest(BaseModel):
    theta_ladder: list[float] = Field(default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 10)])
    lattice_resolution: int = 256
    out_dir: Optional[str] = None


class CertifyResponse(BaseModel):
    all_exact_verified: bool
    n_claims: int
    reports: list[dict[str, Any]]
    quadratic_reports: list[dict[str, Any]]
    files: list[str]


class EHRequest(BaseModel):
    s_max: float = 50.0
    ds: float = 1e-3
    out_dir: Optional[str] = None


class EHResponse(BaseModel):
    s_max: float
    a_s_final: float
    b_s_final: float
    a_over_s_final: float
    b_over_s_final: float
    max_abs_x: float
    max_abs_y: float
    files: list[str]


class SolitonRequest(BaseModel):
    k: int = 2
    rho: float = 1.0
    b0: list[float] = Field(default_factory=lambda: [1.0])
    s_max: float = 50.0
    out_dir: Optional[str] = None


class SolitonResponse(BaseModel):
    runs: list[dict[str, Any]]
    files: list[str]
