from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..core.memory_model import Segment, check_layout
from .base import (
    Access,
    AllocationOrder,
    AttackType,
    SchemeVariant,
    SegmentKind,
    StackMode,
)


class ScenarioSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., description="Scenario identifier")
    description: str = Field(default="", description="Free-form description")
    seed: int = Field(default=20221, description="Seed for every random draw in a run")
    horizon: int = Field(default=4000, ge=0, description="Cycles simulated by `run`")


class CycleSection(BaseModel):
    f_m: float = Field(..., gt=0, description="Master cycle frequency in Hz")


class SegmentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    kind: SegmentKind
    base: int = Field(..., ge=0)
    size: int = Field(..., gt=0)


class SymbolSpec(BaseModel):
    address: int = Field(..., ge=0)
    size: int = Field(default=4, gt=0)


class MemorySection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    address_space: int = Field(default=1 << 32, gt=0)
    main_stack: str = Field(..., description="Symbol holding the main (handler) stack")
    segments: list[SegmentSpec] = Field(..., min_length=1)
    symbols: dict[str, SymbolSpec] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_segments(self) -> "MemorySection":
        check_layout(
            [Segment(s.kind, s.base, s.size, s.name) for s in self.segments], self.address_space
        )
        return self

    def pool_segments(self) -> list[SegmentSpec]:
        return [s for s in self.segments if s.kind == SegmentKind.POOL]


class AllocatorSection(BaseModel):
    """Per-scenario overrides of the allocator settings"""

    model_config = ConfigDict(extra="forbid")

    pool_size: Optional[int] = Field(default=None, gt=0)
    max_allocate_num: Optional[int] = Field(default=None, ge=1)
    alignment: Optional[int] = Field(default=None, ge=1)
    retry_budget: Optional[int] = Field(default=None, ge=1)
    strict: Optional[bool] = None


class TimingSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t_mpu: Optional[float] = None
    t_stack: Optional[float] = None
    t_svc: Optional[float] = None
    t_switch: Optional[float] = None
    t_alloc: Optional[float] = None
    mpu_jitter: Optional[bool] = None


class AttackerSection(BaseModel):
    guesses: Optional[int] = Field(default=None, ge=1, description="Entry guesses per cycle")


class RegionSpec(BaseModel):
    """MPU region given by a symbol, a segment name or an explicit range"""

    model_config = ConfigDict(extra="forbid")

    symbol: Optional[str] = None
    segment: Optional[str] = None
    base: Optional[int] = Field(default=None, ge=0)
    size: Optional[int] = Field(default=None, gt=0)
    privileged: str = Field(default="rwx", description="Permissions for privileged code")
    unprivileged: str = Field(default="", description="Permissions for unprivileged code")

    @field_validator("privileged", "unprivileged")
    @classmethod
    def validate_perms(cls, v: str) -> str:
        Access.parse_set(v)
        return v

    @model_validator(mode="after")
    def exactly_one_location(self) -> "RegionSpec":
        given = [self.symbol is not None, self.segment is not None, self.base is not None]
        if sum(given) != 1:
            raise ValueError("region needs exactly one of symbol, segment or base/size")
        if self.base is not None and self.size is None:
            raise ValueError("region with an explicit base needs a size")
        return self


class TaskSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    priority: int
    aci: int = Field(..., ge=1)
    exec_time_us: float = Field(..., gt=0)
    touches: list[str] = Field(default_factory=list, description='Accesses as "symbol:rw"')
    vulnerable: bool = False

    @field_validator("touches")
    @classmethod
    def validate_touches(cls, v: list[str]) -> list[str]:
        for touch in v:
            symbol, sep, perms = touch.partition(":")
            if not sep or not symbol or not perms:
                raise ValueError(f"touch '{touch}' must look like 'symbol:rw'")
            Access.parse_set(perms)
        return v

    def parsed_touches(self) -> list[tuple[str, frozenset[Access]]]:
        parsed = []
        for touch in self.touches:
            symbol, _, perms = touch.partition(":")
            parsed.append((symbol, Access.parse_set(perms)))
        return parsed


class TaskOrientedSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task_stack: str = Field(..., description="Symbol of the fixed task stack")
    background: list[str] = Field(default_factory=list)
    views: dict[str, list[str]] = Field(default_factory=dict)


class CycleOrientedSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    regions: list[str] = Field(default_factory=list, max_length=16)
    background: list[str] = Field(default_factory=list)
    buffers: list[int] = Field(default_factory=list)
    stack_size: int = Field(..., gt=0)
    order: AllocationOrder = AllocationOrder.DESCENDING
    stack_mode: StackMode = StackMode.SHARED

    @field_validator("buffers")
    @classmethod
    def positive_buffers(cls, v: list[int]) -> list[int]:
        if any(size <= 0 for size in v):
            raise ValueError("buffer sizes must be positive")
        return v


class SchemeSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    default: SchemeVariant = SchemeVariant.CYCLE_ORIENTED
    task_oriented: Optional[TaskOrientedSection] = None
    cycle_oriented: Optional[CycleOrientedSection] = None


class ActionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["write_mem", "call_addr", "overwrite_return", "inject_shellcode"]
    target: Optional[str] = Field(default=None, description="Symbol the action aims at")
    value: int = Field(default=0, ge=0)
    width: int = Field(default=4, ge=1, le=64)
    args: list[int] = Field(default_factory=list)
    site: Literal["stack", "buffer"] = "stack"
    body: list["ActionSpec"] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_shape(self) -> "ActionSpec":
        if self.value >= 1 << (8 * self.width):
            raise ValueError(f"value {self.value} does not fit in {self.width} bytes")
        if self.kind == "inject_shellcode":
            if any(action.kind != "write_mem" for action in self.body):
                raise ValueError("shellcode bodies may only contain write_mem actions")
        elif self.target is None:
            raise ValueError(f"{self.kind} needs a target symbol")
        return self

    def referenced_symbols(self) -> list[str]:
        symbols = [self.target] if self.target is not None else []
        for action in self.body:
            symbols.extend(action.referenced_symbols())
        return symbols


class AttackSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    case: str
    name: str
    type: AttackType
    description: str = ""
    payload: list[ActionSpec] = Field(..., min_length=1)


class GadgetSpec(BaseModel):
    address: str = Field(..., description="Symbol of the gadget")
    effects: list[ActionSpec] = Field(default_factory=list)

    @field_validator("effects")
    @classmethod
    def writes_only(cls, v: list[ActionSpec]) -> list[ActionSpec]:
        if any(action.kind != "write_mem" for action in v):
            raise ValueError("gadget effects may only contain write_mem actions")
        return v


class RopChainSpec(BaseModel):
    name: str
    gadgets: list[GadgetSpec] = Field(default_factory=list)


class Scenario(BaseModel):
    """A complete, validated simulation scenario"""

    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioSection
    cycle: CycleSection
    memory: MemorySection
    allocator: AllocatorSection = Field(default_factory=AllocatorSection)
    timing: TimingSection = Field(default_factory=TimingSection)
    attacker: AttackerSection = Field(default_factory=AttackerSection)
    regions: dict[str, RegionSpec] = Field(default_factory=dict)
    tasks: list[TaskSpec] = Field(..., min_length=1)
    scheme: SchemeSection = Field(default_factory=SchemeSection)
    attacks: list[AttackSpec] = Field(default_factory=list)
    rop_chains: list[RopChainSpec] = Field(default_factory=list)

    @property
    def name(self) -> str:
        return self.scenario.name

    @property
    def vulnerable_task(self) -> Optional[TaskSpec]:
        return next((t for t in self.tasks if t.vulnerable), None)

    @model_validator(mode="after")
    def check_references(self) -> "Scenario":
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ValueError("task names must be unique")

        symbols = self.memory.symbols
        segments = {s.name for s in self.memory.segments}
        for symbol_name, symbol in symbols.items():
            inside = any(
                s.base <= symbol.address and symbol.address + symbol.size <= s.base + s.size
                for s in self.memory.segments
            )
            if not inside:
                raise ValueError(f"symbol '{symbol_name}' is not inside a mapped segment")

        def need_symbol(symbol: str, where: str) -> None:
            if symbol not in symbols:
                raise ValueError(f"{where} references unknown symbol '{symbol}'")

        need_symbol(self.memory.main_stack, "memory.main_stack")
        for task in self.tasks:
            for symbol, _ in task.parsed_touches():
                need_symbol(symbol, f"task '{task.name}'")
        for region_name, region in self.regions.items():
            if region.symbol is not None:
                need_symbol(region.symbol, f"region '{region_name}'")
            if region.segment is not None and region.segment not in segments:
                raise ValueError(f"region '{region_name}' references unknown segment '{region.segment}'")
        for attack in self.attacks:
            for action in attack.payload:
                for symbol in action.referenced_symbols():
                    need_symbol(symbol, f"attack '{attack.case}'")
        for chain in self.rop_chains:
            for gadget in chain.gadgets:
                need_symbol(gadget.address, f"rop chain '{chain.name}'")
                for action in gadget.effects:
                    for symbol in action.referenced_symbols():
                        need_symbol(symbol, f"rop chain '{chain.name}'")

        def need_region(region: str, where: str) -> None:
            if region not in self.regions:
                raise ValueError(f"{where} references unknown region '{region}'")

        to = self.scheme.task_oriented
        if to is not None:
            need_symbol(to.task_stack, "scheme.task_oriented.task_stack")
            for region in to.background:
                need_region(region, "scheme.task_oriented.background")
            for task_name, view in to.views.items():
                if task_name not in names:
                    raise ValueError(f"view for unknown task '{task_name}'")
                for region in view:
                    need_region(region, f"view of '{task_name}'")
        co = self.scheme.cycle_oriented
        if co is not None:
            for region in [*co.regions, *co.background]:
                need_region(region, "scheme.cycle_oriented")
            pools = self.memory.pool_segments()
            if len(pools) != 1:
                raise ValueError(
                    f"scheme.cycle_oriented needs exactly one pool segment, found {len(pools)}"
                )
            pool_size = self.allocator.pool_size
            if pool_size is not None and pool_size != pools[0].size:
                raise ValueError(
                    f"allocator.pool_size {pool_size} differs from pool segment "
                    f"'{pools[0].name}' of {pools[0].size} bytes"
                )

        if self.attacks and self.vulnerable_task is None:
            raise ValueError("attacks need a task marked vulnerable")
        return self
