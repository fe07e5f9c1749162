# ctomp/core/cycle_scheduler.py
"""Cycle-based task dispatch.

Every master cycle lasts ``10**6 / f_m`` microseconds. Tasks due in the cycle
run in priority order for as long as the remaining budget covers them; the
first task that does not fit ends the dispatch and every task after it is
skipped for this cycle. Skipped tasks keep their ``last_run`` and stay due.
"""

import struct
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

from ..models.base import Access, PrivilegeMode
from ..utils.exceptions import BudgetUnderflowError, MemoryFaultError
from ..utils.logging_manager import LoggingManager
from .memory_model import Address, FaultEvent, Machine

if TYPE_CHECKING:
    from .protection_engine import ProtectionEngine

logger = LoggingManager.get_logger(__name__)

PROTECTION_CATEGORIES = ("mpu", "switch", "stack", "svc")
TICKS_RECORD = struct.Struct("<I")


@dataclass(frozen=True, slots=True)
class CycleConfig:
    f_m: float

    def __post_init__(self):
        if self.f_m <= 0:
            raise ValueError(f"Cycle frequency must be positive, got {self.f_m}")

    @property
    def budget_us(self) -> float:
        return 1_000_000 / self.f_m


@dataclass(frozen=True, slots=True)
class Touch:
    address: Address
    access: Access
    symbol: Optional[str] = None


@dataclass(frozen=True, slots=True)
class Task:
    name: str
    priority: int
    aci: int
    exec_time_us: float
    touches: tuple[Touch, ...] = ()
    vulnerable: bool = False

    def __post_init__(self):
        if self.aci < 1:
            raise ValueError(f"Task '{self.name}' needs aci >= 1, got {self.aci}")
        if self.exec_time_us <= 0:
            raise ValueError(f"Task '{self.name}' needs a positive exec_time_us")

    @property
    def sort_key(self) -> tuple[int, str]:
        return self.priority, self.name

    @property
    def access_list(self) -> list[tuple[Address, Access]]:
        return [(t.address, t.access) for t in self.touches]


@dataclass(slots=True)
class SoftTimer:
    """Scheduler bookkeeping; optionally mirrored into simulated memory at `address`"""

    ticks: int = 0
    last_run: dict[str, int] = field(default_factory=dict)
    address: Optional[Address] = None
    mutation_modes: list[PrivilegeMode] = field(default_factory=list)

    def boot(self, tasks: Iterable[Task]) -> None:
        self.ticks = 0
        self.last_run = {task.name: -task.aci for task in tasks}
        self.mutation_modes.clear()

    def is_due(self, task: Task) -> bool:
        return self.ticks - self.last_run.get(task.name, -task.aci) >= task.aci

    def advance(self, executed: Sequence[Task], machine: Optional[Machine] = None) -> None:
        """Stamp executed tasks with the current tick and move to the next cycle"""
        if machine is not None and self.address is not None:
            result = machine.write(self.address, TICKS_RECORD.pack((self.ticks + 1) & 0xFFFFFFFF))
            if isinstance(result, FaultEvent):
                raise MemoryFaultError(result, "soft_timer_update")
        if machine is not None:
            self.mutation_modes.append(machine.mode)
        for task in executed:
            self.last_run[task.name] = self.ticks
        self.ticks += 1


@dataclass(frozen=True, slots=True)
class CycleRecord:
    cycle: int
    executed: tuple[str, ...]
    skipped: tuple[str, ...]
    overhead_us: float
    alloc_us: float
    exec_us: float
    used_us: float
    degraded: bool = False
    faults: int = 0
    stack_base: Optional[Address] = None


@dataclass(slots=True)
class CycleTrace:
    config: CycleConfig
    scheme: str
    records: list[CycleRecord] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.records)

    def executions(self, task_name: str) -> int:
        return sum(1 for r in self.records if task_name in r.executed)

    @property
    def degraded_cycles(self) -> int:
        return sum(1 for r in self.records if r.degraded)

    @property
    def mean_overhead_us(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.overhead_us for r in self.records) / len(self.records)

    @property
    def max_used_us(self) -> float:
        return max((r.used_us for r in self.records), default=0.0)

    def csv_rows(self) -> list[dict]:
        rows = []
        for record in self.records:
            for status, names in (("executed", record.executed), ("skipped", record.skipped)):
                for name in names:
                    rows.append(
                        {
                            "cycle": record.cycle,
                            "task": name,
                            "status": status,
                            "overhead_us": round(record.overhead_us, 3),
                            "used_us": round(record.used_us, 3),
                        }
                    )
        return rows


def expected_frequency(task: Task, config: CycleConfig) -> float:
    return config.f_m / task.aci


def due_tasks(timer: SoftTimer, tasks: Iterable[Task]) -> list[Task]:
    return sorted((t for t in tasks if timer.is_due(t)), key=lambda t: t.sort_key)


def measured_frequency(trace: CycleTrace, task: Task | str) -> float:
    """Observed executions scaled to Hz; an empty trace measures 0"""
    if trace.horizon == 0:
        return 0.0
    name = task if isinstance(task, str) else task.name
    return trace.executions(name) * trace.config.f_m / trace.horizon


def _protection_charges(machine: Machine) -> float:
    return sum(machine.charged(c) for c in PROTECTION_CATEGORIES)


def run_cycle(
    machine: Machine,
    engine: "ProtectionEngine",
    tasks: Sequence[Task],
    timer: SoftTimer,
    config: CycleConfig,
) -> CycleRecord:
    budget = config.budget_us
    fixed = engine.fixed_overhead_us()
    if fixed > budget:
        raise BudgetUnderflowError(fixed, budget, engine.variant.value)

    cycle = timer.ticks
    start_clock = machine.clock_us
    start_protection = _protection_charges(machine)
    start_alloc = machine.charged("alloc")
    start_exec = machine.charged("exec")
    start_faults = len(machine.faults)

    due = due_tasks(timer, tasks)
    context = engine.begin_cycle(machine, due, cycle)
    reserve = engine.end_overhead_us()

    executed: list[Task] = []
    skipped: list[Task] = []
    for index, task in enumerate(due):
        used = machine.clock_us - start_clock
        cost = task.exec_time_us + engine.task_overhead_us(task)
        if used + cost + reserve > budget:
            skipped.extend(due[index:])
            break
        engine.run_task(machine, task, context)
        executed.append(task)

    engine.end_cycle(machine, timer, executed, context)

    record = CycleRecord(
        cycle=cycle,
        executed=tuple(t.name for t in executed),
        skipped=tuple(t.name for t in skipped),
        overhead_us=_protection_charges(machine) - start_protection,
        alloc_us=machine.charged("alloc") - start_alloc,
        exec_us=machine.charged("exec") - start_exec,
        used_us=machine.clock_us - start_clock,
        degraded=context.degraded,
        faults=len(machine.faults) - start_faults,
        stack_base=context.stack_base,
    )
    if skipped:
        logger.debug(
            "Tasks skipped", cycle=cycle, skipped=list(record.skipped), used_us=record.used_us
        )
    return record


def run_horizon(
    machine: Machine,
    engine: "ProtectionEngine",
    tasks: Sequence[Task],
    config: CycleConfig,
    horizon: int,
    timer: Optional[SoftTimer] = None,
) -> CycleTrace:
    """Boot the timer and simulate `horizon` consecutive cycles"""
    if timer is None:
        timer = SoftTimer()
    timer.boot(tasks)
    trace = CycleTrace(config=config, scheme=engine.variant.value)
    for _ in range(horizon):
        trace.records.append(run_cycle(machine, engine, tasks, timer, config))
    return trace
