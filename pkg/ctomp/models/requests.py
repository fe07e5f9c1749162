from typing import Optional

from pydantic import BaseModel, Field, field_validator

from .base import SchemeVariant


class RunRequest(BaseModel):
    scenario: str = Field(..., description="Name of a bundled scenario")
    scheme: Optional[SchemeVariant] = Field(
        default=None, description="Protection scheme; the scenario default when omitted"
    )
    seed: Optional[int] = Field(default=None, description="Overrides the scenario seed")
    horizon: Optional[int] = Field(default=None, ge=0, description="Cycles to simulate")

    @field_validator("scenario")
    @classmethod
    def validate_scenario(cls, v):
        if not v or not v.strip():
            raise ValueError("Scenario cannot be empty")
        return v.strip()


class CompareRequest(RunRequest):
    schemes: list[SchemeVariant] = Field(
        default_factory=lambda: list(SchemeVariant),
        min_length=2,
        description="Schemes simulated side by side with the same seed",
    )


class AttackMatrixRequest(BaseModel):
    scenario: str = Field(..., description="Name of a bundled scenario")
    schemes: list[SchemeVariant] = Field(default_factory=lambda: list(SchemeVariant))
    seed: Optional[int] = None
    trials: Optional[int] = Field(
        default=None, ge=1, description="Cycles used for probabilistic cases"
    )


class AllocBenchRequest(BaseModel):
    pool_size: int = Field(default=5632, gt=0)
    sizes: list[int] = Field(
        default_factory=lambda: [144, 304, 64, 64, 112, 1024],
        min_length=1,
        description="Buffer and stack sizes requested every trial",
    )
    trials: int = Field(default=10_000, ge=1)
    alignment: int = Field(default=8, ge=1)
    max_allocate_num: Optional[int] = Field(default=None, ge=1)
    retry_budget: int = Field(default=3, ge=1)
    seed: Optional[int] = None

    @field_validator("sizes")
    @classmethod
    def validate_sizes(cls, v):
        if any(size <= 0 for size in v):
            raise ValueError("Sizes must be positive")
        return v
