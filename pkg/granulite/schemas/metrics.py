"""
Particle metric schemas.

This module defines the Pydantic models for per-segment size/shape metrics
and the sieve-style gradation table.
"""
from typing import List, Tuple

from pydantic import BaseModel, Field, model_validator


class ParticleMetrics(BaseModel):
    """Size and shape of one segmented particle."""
    segment_id: int = Field(..., ge=0)
    face_count: int = Field(..., ge=1)
    surface_area: float = Field(..., ge=0, description="Sum of face areas (units^2)")
    principal_dimensions: Tuple[float, float, float] = Field(
        ..., description="Extents along the principal axes, d1 >= d2 >= d3"
    )
    elongation: float = Field(..., ge=0, le=1, description="d2 / d1")
    flatness: float = Field(..., ge=0, le=1, description="d3 / d2")

    @model_validator(mode="after")
    def _ordered_dimensions(self) -> "ParticleMetrics":
        d1, d2, d3 = self.principal_dimensions
        if not d1 >= d2 >= d3 >= 0:
            raise ValueError(f"principal dimensions must be ordered and nonnegative: {self.principal_dimensions}")
        return self

    @property
    def d1(self) -> float:
        return self.principal_dimensions[0]

    @property
    def d2(self) -> float:
        return self.principal_dimensions[1]

    @property
    def d3(self) -> float:
        return self.principal_dimensions[2]


class GradationRow(BaseModel):
    """Cumulative percent of particles finer than a sieve size."""
    size: float
    percent_finer: float = Field(..., ge=0, le=100)


class GradationReport(BaseModel):
    """Sieve-style cumulative size distribution by intermediate dimension d2."""
    rows: List[GradationRow]
    particle_count: int = Field(..., ge=1)

    @model_validator(mode="after")
    def _monotone(self) -> "GradationReport":
        percents = [row.percent_finer for row in self.rows]
        if any(b < a for a, b in zip(percents, percents[1:])):
            raise ValueError("gradation percents must be nondecreasing")
        if not percents or percents[-1] != 100.0:
            raise ValueError("gradation must end at 100%")
        return self
