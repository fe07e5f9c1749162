from typing import Any, Literal, Optional

from pydantic import BaseModel, Field

from .base import AllocationOrder, SchemeVariant, Verdict

# Relative efficiency gain of large-to-small allocation measured on the flight controller
REFERENCE_ORDER_IMPROVEMENT = 0.265


class ReportMeta(BaseModel):
    scenario: Optional[str] = Field(default=None, description="Scenario name")
    seed: int = Field(..., description="Seed every random draw derived from")
    horizon: Optional[int] = Field(default=None, description="Simulated cycles")
    trials: Optional[int] = Field(default=None, description="Monte Carlo trials")
    f_m: Optional[float] = Field(default=None, description="Master cycle frequency, Hz")
    budget_us: Optional[float] = Field(default=None, description="Cycle budget, us")
    retry_budget: Optional[int] = Field(
        default=None, description="Placement draws per allocation request"
    )
    retry_budget_source: Optional[Literal["scenario", "settings"]] = Field(
        default=None, description="Where retry_budget came from"
    )
    setup_attempts: Optional[int] = Field(
        default=None, description="Whole-set allocation attempts before a cycle degrades"
    )
    version: str = Field(..., description="Simulator version")


class OverheadBreakdownModel(BaseModel):
    mpu_us: float
    switch_us: float
    stack_us: float
    svc_us: float
    total_us: float


class FrequencyRow(BaseModel):
    task: str
    priority: int
    aci: int
    expected_hz: float = Field(..., description="f_m / aci")
    measured_hz: dict[SchemeVariant, float] = Field(default_factory=dict)
    ratio: dict[SchemeVariant, float] = Field(
        default_factory=dict, description="measured / expected"
    )
    skipped: dict[SchemeVariant, int] = Field(default_factory=dict)


class OverheadRow(BaseModel):
    scheme: SchemeVariant
    model: OverheadBreakdownModel = Field(
        ..., description="Closed-form per-cycle overhead with every task due"
    )
    measured_mean_us: float = Field(..., description="Mean protection overhead per cycle")
    measured_max_us: float
    alloc_mean_us: float = Field(default=0.0, description="Mean allocation time per cycle")
    mean_retries: float = Field(default=0.0, description="Mean placement retries per cycle")
    degraded_cycles: int = 0
    max_used_us: float = Field(..., description="Largest per-cycle time used")
    budget_us: float


class AttackCell(BaseModel):
    case: str
    name: str
    scheme: SchemeVariant
    verdict: Verdict
    detail: dict[str, Any] = Field(default_factory=dict)
    trials: int = 1
    success_rate: Optional[float] = None
    closed_form: Optional[float] = None
    ci_half_width: Optional[float] = None


class AllocationRow(BaseModel):
    order: AllocationOrder
    trials: int
    mean_retries: float = Field(..., description="Mean placement retries per trial")
    failure_rate: float = Field(..., description="Share of trials whose set failed")
    failures: int
    retry_histogram: dict[int, int] = Field(default_factory=dict)


class AllocationSummary(BaseModel):
    pool_size: int
    sizes: list[int]
    alignment: int
    retry_budget: int
    rows: list[AllocationRow]
    relative_improvement: float = Field(
        ..., description="Fewer mean retries of descending against ascending order"
    )
    reference_improvement: float = REFERENCE_ORDER_IMPROVEMENT


class Report(BaseModel):
    kind: Literal["run", "compare", "attack_matrix", "alloc_bench"]
    meta: ReportMeta
    schemes: list[SchemeVariant] = Field(default_factory=list)
    frequencies: list[FrequencyRow] = Field(default_factory=list)
    overheads: list[OverheadRow] = Field(default_factory=list)
    attacks: list[AttackCell] = Field(default_factory=list)
    allocation: Optional[AllocationSummary] = None
    warnings: list[str] = Field(default_factory=list)

    def verdicts(self, scheme: SchemeVariant) -> dict[str, Verdict]:
        return {cell.case: cell.verdict for cell in self.attacks if cell.scheme == scheme}
