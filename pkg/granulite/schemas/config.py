"""
Configuration schemas for Granulite.

This module defines the Pydantic models for every tunable parameter of the
library and the command-line runner.
"""
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ReconstructionParams(BaseModel):
    """Parameters for Poisson surface reconstruction."""
    grid_res: int = Field(64, ge=8, le=256, description="Grid cells along the longest bounding-box axis")
    padding: int = Field(4, ge=1, description="Empty cells added on every side of the bounding box")
    cg_tol: float = Field(1e-8, gt=0, description="Relative residual tolerance of the CG solve")
    cg_max_iter: Optional[int] = Field(None, ge=1, description="CG iteration limit (default 10 x unknowns)")
    jacobi: bool = Field(False, description="Use a Jacobi preconditioner in CG")
    normal_neighbors: int = Field(10, ge=3, description="k for PCA normal estimation when normals are missing")
    smoothing_sigma: float = Field(0.0, ge=0, description="Gaussian smoothing of the splatted field, in cells")
    snap_to_samples: bool = Field(True, description="Move extracted vertices onto the nearest sample tangent plane")


class CriterionParams(BaseModel):
    """Parameters of the curvature criterion."""
    threshold: float = Field(0.7, ge=-2.0, le=2.0, description="Threshold t of (c + n_next) . n_cur > t")


class BundleAdjustmentOptions(BaseModel):
    """Levenberg-Marquardt solver options."""
    gtol: float = Field(1e-10, gt=0, description="Stop when the gradient infinity norm falls below this")
    ftol: float = Field(1e-12, gt=0, description="Stop when the relative cost decrease falls below this")
    max_iterations: int = Field(100, ge=1)
    lambda_init: float = Field(1e-3, gt=0)
    lambda_factor: float = Field(10.0, gt=1)
    lambda_max: float = Field(1e16, gt=0)
    cost_floor: float = Field(1e-20, ge=0, description="Absolute cost regarded as converged")


class SceneSpec(BaseModel):
    """Inputs of the synthetic multi-view scene generator."""
    n_cameras: int = Field(5, ge=2)
    n_points: int = Field(50, ge=6)
    extent: float = Field(1.0, gt=0, description="Half-width of the cube the points are drawn from")
    ring_radius: float = Field(6.0, gt=0, description="Horizontal distance of the cameras from the point centroid")
    heights: List[float] = Field(default_factory=lambda: [1.0, 2.5, 4.0], min_length=1)
    focal_length: float = Field(800.0, gt=0, description="Focal length in pixels")
    principal_point: List[float] = Field(default_factory=lambda: [320.0, 240.0], min_length=2, max_length=2)
    noise_sigma: float = Field(0.0, ge=0, description="Pixel noise standard deviation")
    seed: int = 0


InputKind = Literal["cloud", "mesh", "scene"]


class PipelineConfig(BaseModel):
    """Everything one command-line run needs."""
    model_config = ConfigDict(extra="forbid")

    input: Optional[Path] = Field(None, description="Input file (PLY cloud/mesh, OBJ mesh or scene text)")
    input_kind: Optional[InputKind] = None
    labels: Optional[Path] = Field(None, description="Label file for the metrics command")
    output_dir: Path = Path("granulite_out")

    grid_res: int = Field(64, ge=8, le=256)
    padding: int = Field(4, ge=1)
    cg_tol: float = Field(1e-8, gt=0)
    cg_max_iter: Optional[int] = Field(None, ge=1)
    jacobi: bool = False
    normal_neighbors: int = Field(10, ge=3)
    smoothing_sigma: float = Field(0.0, ge=0)
    snap_to_samples: bool = True
    dump_grid: bool = Field(False, description="Write the shifted indicator grid next to mesh.ply")

    threshold: float = Field(0.7, ge=-2.0, le=2.0)
    min_faces: int = Field(20, ge=1)

    true_length: Optional[float] = Field(None, gt=0)
    measured_length: Optional[float] = Field(None, gt=0)
    sieves: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])

    gtol: float = Field(1e-10, gt=0)
    ftol: float = Field(1e-12, gt=0)
    max_iterations: int = Field(100, ge=1)

    fixture: Literal["all", "sphere", "icosphere", "two-ball", "stockpile", "scene"] = "all"
    points: Optional[int] = Field(None, ge=50, description="Sample count for synthetic clouds")

    seed: int = 0
    threads: int = Field(1, ge=1)
    binary: bool = Field(True, description="Write binary little-endian PLY")

    @field_validator("input", "labels")
    @classmethod
    def _non_empty_path(cls, value: Optional[Path]) -> Optional[Path]:
        if value is not None and str(value).strip() in ("", "."):
            raise ValueError("path must be non-empty")
        return value

    @field_validator("sieves")
    @classmethod
    def _ascending_sieves(cls, value: List[float]) -> List[float]:
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("sieves must be strictly ascending")
        return value

    @model_validator(mode="after")
    def _paired_calibration(self) -> "PipelineConfig":
        if (self.true_length is None) != (self.measured_length is None):
            raise ValueError("true_length and measured_length must be given together")
        return self

    def reconstruction(self) -> ReconstructionParams:
        return ReconstructionParams(
            grid_res=self.grid_res,
            padding=self.padding,
            cg_tol=self.cg_tol,
            cg_max_iter=self.cg_max_iter,
            jacobi=self.jacobi,
            normal_neighbors=self.normal_neighbors,
            smoothing_sigma=self.smoothing_sigma,
            snap_to_samples=self.snap_to_samples,
        )

    def criterion(self) -> CriterionParams:
        return CriterionParams(threshold=self.threshold)

    def bundle_adjustment(self) -> BundleAdjustmentOptions:
        return BundleAdjustmentOptions(gtol=self.gtol, ftol=self.ftol, max_iterations=self.max_iterations)
