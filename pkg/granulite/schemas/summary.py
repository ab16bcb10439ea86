"""
Run summary schemas.

This module defines the Pydantic models written as machine-readable reports:
the bundle-adjustment convergence report and the per-run summary.
"""
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field

Termination = Literal["gtol", "ftol", "max_iterations", "cost_floor"]


class ConvergenceReport(BaseModel):
    """Outcome of one bundle adjustment."""
    iterations: int = Field(..., ge=0)
    accepted_steps: int = Field(..., ge=0)
    initial_cost: float
    final_cost: float
    final_rmse: float = Field(..., description="Root mean squared pixel residual")
    final_lambda: float
    termination: Termination
    cost_history: List[float] = Field(default_factory=list, description="Initial cost, then the cost after every accepted step")


class StageRecord(BaseModel):
    """One executed pipeline stage."""
    name: str
    seconds: float = Field(..., description="Wall-clock duration; excluded from reproducibility checks")
    details: Dict[str, Any] = Field(default_factory=dict)


class RunSummary(BaseModel):
    """Machine-readable summary written at the end of every run."""
    command: str
    status: Literal["ok", "failed"] = "ok"
    parameters: Dict[str, Any] = Field(default_factory=dict)
    stages: List[StageRecord] = Field(default_factory=list)
    segment_count: Optional[int] = None
    artifacts: List[str] = Field(default_factory=list)
    error: Optional[str] = None
    errors: Dict[str, Any] = Field(default_factory=dict, description="Failure counts by type and the recent failures")


class ReconstructionReport(BaseModel):
    """Diagnostics of one Poisson surface reconstruction."""
    grid_shape: Tuple[int, int, int] = Field(..., description="Cells per axis")
    spacing: float = Field(..., gt=0)
    normals_estimated: bool = False
    cg_iterations: int = Field(..., ge=0)
    relative_residual: float = Field(..., ge=0)
    converged: bool
    iso_value: float = Field(..., description="Mean indicator value at the input samples")
    snapped_vertices: int = Field(0, ge=0, description="Vertices moved onto their nearest sample plane")
    vertex_count: int = Field(..., ge=0)
    face_count: int = Field(..., ge=0)
