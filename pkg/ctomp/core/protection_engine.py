# ctomp/core/protection_engine.py
"""Protection schemes: the unprotected baseline, per-task memory views and the
cycle-oriented scheme with a randomized secure process stack.

An engine is attached to a machine once (boot: background regions, static
stacks, allocator wiring) and then drives the privilege and MPU choreography
around every cycle the scheduler runs.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from ..models.base import AllocationOrder, PrivilegeMode, SchemeVariant, StackKnowledge, StackMode
from ..utils.exceptions import (
    AllocationFailedError,
    CapacityExceededError,
    PrivilegeViolationError,
)
from ..utils.logging_manager import LoggingManager
from .allocator import AllocatedRegion, PoolAllocator, order_sizes
from .cycle_scheduler import SoftTimer, Task
from .memory_model import DEFAULT_MPU_CAPACITY, Address, Machine, MpuRegion
from .timing import TimeModel

logger = LoggingManager.get_logger(__name__)

STACK_ALIGNMENT = 8


def stack_top(start: Address, size: int) -> Address:
    """Initial PSP for a full-descending stack occupying [start, start+size)"""
    return start + size - STACK_ALIGNMENT


@dataclass(frozen=True, slots=True)
class OverheadBreakdown:
    mpu_us: float = 0.0
    switch_us: float = 0.0
    stack_us: float = 0.0
    svc_us: float = 0.0

    @property
    def total_us(self) -> float:
        return self.mpu_us + self.switch_us + self.stack_us + self.svc_us

    def __add__(self, other: "OverheadBreakdown") -> "OverheadBreakdown":
        return OverheadBreakdown(
            self.mpu_us + other.mpu_us,
            self.switch_us + other.switch_us,
            self.stack_us + other.stack_us,
            self.svc_us + other.svc_us,
        )

    def as_dict(self) -> dict[str, float]:
        return {
            "mpu_us": self.mpu_us,
            "switch_us": self.switch_us,
            "stack_us": self.stack_us,
            "svc_us": self.svc_us,
            "total_us": self.total_us,
        }


def overhead_task_oriented(n: int, m: Sequence[int], tm: TimeModel) -> OverheadBreakdown:
    """Per-cycle cost of switching memory views before and after every task"""
    if len(m) != n:
        raise ValueError(f"Expected {n} view counts, got {len(m)}")
    if any(m_i < 1 for m_i in m):
        raise ValueError("Every task view needs at least one region")
    return OverheadBreakdown(
        mpu_us=sum(m) * tm.t_mpu,
        switch_us=n * 2 * tm.t_switch,
        stack_us=n * tm.t_stack,
        svc_us=n * tm.t_svc,
    )


def overhead_ctomp(z: int, tm: TimeModel) -> OverheadBreakdown:
    """Per-cycle cost of one memory view for the whole cycle"""
    if not 0 <= z <= DEFAULT_MPU_CAPACITY:
        raise ValueError(f"Region count must be in [0, {DEFAULT_MPU_CAPACITY}], got {z}")
    return OverheadBreakdown(
        mpu_us=z * tm.t_mpu,
        switch_us=2 * tm.t_switch,
        stack_us=tm.t_stack,
        svc_us=tm.t_svc,
    )


@dataclass(slots=True)
class CycleContext:
    """What a protection engine set up for the cycle in progress"""

    cycle: int
    degraded: bool = False
    stack_base: Optional[Address] = None
    stack_size: int = 0
    regions: list[AllocatedRegion] = field(default_factory=list)
    buffers: list[AllocatedRegion] = field(default_factory=list)
    task_stacks: dict[str, AllocatedRegion] = field(default_factory=dict)
    retries: int = 0


class ProtectionEngine(ABC):
    variant: SchemeVariant

    def __init__(self, background: Sequence[MpuRegion] = ()):
        self.background = list(background)

    def attach(self, machine: Machine) -> None:
        """Boot-time setup; background regions are charged to boot, not to cycles"""
        machine.mode = PrivilegeMode.PRIVILEGED
        for region in self.background:
            machine.configure_background(region)
        logger.debug(
            "Protection engine attached",
            scheme=self.variant.value,
            background=len(self.background),
        )

    def validate(self, tasks: Sequence[Task]) -> None:
        """Reject task sets the scheme cannot protect"""

    @property
    def knowledge(self) -> StackKnowledge:
        return StackKnowledge.EXACT

    def fixed_overhead_us(self) -> float:
        return 0.0

    def end_overhead_us(self) -> float:
        return 0.0

    def task_overhead_us(self, task: Task) -> float:
        return 0.0

    def model_overhead(self, tasks: Sequence[Task]) -> OverheadBreakdown:
        """Closed-form per-cycle overhead when every task in `tasks` runs"""
        return OverheadBreakdown()

    @abstractmethod
    def begin_cycle(self, machine: Machine, due: Sequence[Task], cycle: int) -> CycleContext:
        pass

    @abstractmethod
    def run_task(self, machine: Machine, task: Task, context: CycleContext) -> None:
        pass

    @abstractmethod
    def end_cycle(
        self,
        machine: Machine,
        timer: SoftTimer,
        executed: Sequence[Task],
        context: CycleContext,
    ) -> None:
        pass

    def enter_task(self, machine: Machine, task: Task, context: CycleContext) -> None:
        """Put the machine in the state it is in while `task` runs"""


class NoProtection(ProtectionEngine):
    """Original firmware: everything runs privileged on the main stack, no MPU program"""

    variant = SchemeVariant.NONE

    def begin_cycle(self, machine: Machine, due: Sequence[Task], cycle: int) -> CycleContext:
        return CycleContext(cycle=cycle, stack_base=machine.stacks.msp)

    def run_task(self, machine: Machine, task: Task, context: CycleContext) -> None:
        machine.execute_task(task.name, task.exec_time_us, task.access_list)

    def end_cycle(self, machine, timer, executed, context) -> None:
        timer.advance(executed, machine)


class TaskOrientedEngine(ProtectionEngine):
    """Per-task memory views reprogrammed around every task execution"""

    variant = SchemeVariant.TASK_ORIENTED

    def __init__(
        self,
        views: Mapping[str, Sequence[MpuRegion]],
        task_stack: tuple[Address, int],
        time_model: TimeModel,
        background: Sequence[MpuRegion] = (),
    ):
        super().__init__(background)
        self.views = {name: list(regions) for name, regions in views.items()}
        self.task_stack = task_stack
        self.time_model = time_model

    def view_count(self, task: Task) -> int:
        return len(self.views.get(task.name, ()))

    def validate(self, tasks: Sequence[Task]) -> None:
        for task in tasks:
            if self.view_count(task) < 1:
                raise ValueError(f"Task '{task.name}' has no memory view")

    def attach(self, machine: Machine) -> None:
        machine.register_static_stack(*self.task_stack)
        super().attach(machine)

    def task_overhead_us(self, task: Task) -> float:
        tm = self.time_model
        return self.view_count(task) * tm.mpu_bound + tm.context_switch_cost

    def model_overhead(self, tasks: Sequence[Task]) -> OverheadBreakdown:
        return overhead_task_oriented(
            len(tasks), [self.view_count(t) for t in tasks], self.time_model
        )

    def begin_cycle(self, machine: Machine, due: Sequence[Task], cycle: int) -> CycleContext:
        return CycleContext(cycle=cycle, stack_base=self.task_stack[0], stack_size=self.task_stack[1])

    def run_task(self, machine: Machine, task: Task, context: CycleContext) -> None:
        run_task_oriented(machine, self, task)

    def end_cycle(self, machine, timer, executed, context) -> None:
        timer.advance(executed, machine)

    def enter_task(self, machine: Machine, task: Task, context: CycleContext) -> None:
        _install_view(machine, self.views.get(task.name, ()))
        machine.drop_to_unprivileged(stack_top(*self.task_stack))


def _install_view(machine: Machine, regions: Sequence[MpuRegion]) -> None:
    if len(regions) + len(machine.mpu.background) > machine.mpu.capacity:
        raise CapacityExceededError(len(regions) + len(machine.mpu.background), machine.mpu.capacity)
    machine.clear_regions()
    for region in regions:
        machine.configure_mpu(region)


def run_task_oriented(machine: Machine, engine: TaskOrientedEngine, task: Task) -> None:
    """Program the task's view, drop to unprivileged, run it, SVC back"""
    if machine.mode != PrivilegeMode.PRIVILEGED:
        raise PrivilegeViolationError("run_task_oriented", machine.mode.value)
    _install_view(machine, engine.views.get(task.name, ()))
    machine.drop_to_unprivileged(stack_top(*engine.task_stack))
    machine.execute_task(task.name, task.exec_time_us, task.access_list)
    machine.svc_call()


class CycleOrientedEngine(ProtectionEngine):
    """One memory view per cycle plus per-cycle randomized buffers and process stack"""

    variant = SchemeVariant.CYCLE_ORIENTED

    def __init__(
        self,
        cycle_regions: Sequence[MpuRegion],
        buffer_sizes: Sequence[int],
        stack_size: int,
        allocator: PoolAllocator,
        time_model: TimeModel,
        allocation_order: AllocationOrder = AllocationOrder.DESCENDING,
        stack_mode: StackMode = StackMode.SHARED,
        background: Sequence[MpuRegion] = (),
        strict: bool = False,
        setup_attempts: int = 1,
    ):
        super().__init__(background)
        if len(cycle_regions) > DEFAULT_MPU_CAPACITY:
            raise CapacityExceededError(len(cycle_regions), DEFAULT_MPU_CAPACITY)
        if stack_size <= 0:
            raise ValueError("The secure process stack needs a positive size")
        self.cycle_regions = list(cycle_regions)
        self.buffer_sizes = list(buffer_sizes)
        self.stack_size = stack_size
        self.allocator = allocator
        self.time_model = time_model
        self.allocation_order = allocation_order
        self.stack_mode = stack_mode
        self.strict = strict
        self.setup_attempts = max(1, setup_attempts)

    @property
    def z(self) -> int:
        return len(self.cycle_regions)

    @property
    def knowledge(self) -> StackKnowledge:
        return StackKnowledge.GUESS

    def attach(self, machine: Machine) -> None:
        machine.allocator = self.allocator
        super().attach(machine)

    def fixed_overhead_us(self) -> float:
        tm = self.time_model
        return self.z * tm.mpu_bound + tm.context_switch_cost

    def end_overhead_us(self) -> float:
        return self.time_model.t_svc + self.time_model.t_switch

    def model_overhead(self, tasks: Sequence[Task]) -> OverheadBreakdown:
        return overhead_ctomp(self.z, self.time_model)

    def allocation_requests(self, due: Sequence[Task]) -> list[tuple[str, int]]:
        """Labelled sizes for one cycle, in allocation order"""
        requests = [(f"buffer{i}", size) for i, size in enumerate(self.buffer_sizes)]
        if self.stack_mode == StackMode.PER_TASK and due:
            requests += [(f"stack:{task.name}", self.stack_size) for task in due]
        else:
            requests.append(("stack", self.stack_size))
        return order_sizes(requests, self.allocation_order, key=lambda r: r[1])

    def begin_cycle(self, machine: Machine, due: Sequence[Task], cycle: int) -> CycleContext:
        return begin_cycle_ctomp(machine, self, due, cycle)

    def run_task(self, machine: Machine, task: Task, context: CycleContext) -> None:
        if not context.degraded and task.name in context.task_stacks:
            stack = context.task_stacks[task.name]
            machine.set_process_stack(stack_top(stack.start_address, stack.size))
        machine.execute_task(task.name, task.exec_time_us, task.access_list)

    def end_cycle(self, machine, timer, executed, context) -> None:
        end_cycle_ctomp(machine, self, timer, executed, context)

    def enter_task(self, machine: Machine, task: Task, context: CycleContext) -> None:
        stack = context.task_stacks.get(task.name)
        if stack is not None:
            machine.set_process_stack(stack_top(stack.start_address, stack.size))
            context.stack_base, context.stack_size = stack.start_address, stack.size


def begin_cycle_ctomp(
    machine: Machine, engine: CycleOrientedEngine, due: Sequence[Task], cycle: int
) -> CycleContext:
    """Program the cycle's view, draw buffers and stack from the pool, drop privilege"""
    if machine.mode != PrivilegeMode.PRIVILEGED:
        raise PrivilegeViolationError("begin_cycle", machine.mode.value)

    context = CycleContext(cycle=cycle)
    machine.clear_regions()
    for region in engine.cycle_regions:
        machine.configure_mpu(region)

    requests = engine.allocation_requests(due)
    sizes = [size for _, size in requests]
    allocator = engine.allocator
    granted = None
    for _ in range(engine.setup_attempts):
        before = allocator.stats.realloc_retries + allocator.stats.successes
        retries_before = allocator.stats.realloc_retries
        granted = allocator.alloc_cycle_set(sizes)
        draws = allocator.stats.realloc_retries + allocator.stats.successes - before
        context.retries += allocator.stats.realloc_retries - retries_before
        if engine.time_model.t_alloc:
            machine.charge("alloc", draws * engine.time_model.t_alloc)
        if granted is not None:
            break

    if granted is None:
        if engine.strict:
            raise AllocationFailedError(sizes, context.retries, cycle)
        logger.warning(
            "Cycle buffer allocation failed, running cycle unprotected",
            cycle=cycle,
            retries=context.retries,
        )
        context.degraded = True
        context.stack_base = machine.stacks.msp
        return context

    context.regions = granted
    for (label, _), region in zip(requests, granted):
        if label == "stack":
            context.stack_base, context.stack_size = region.start_address, region.size
        elif label.startswith("stack:"):
            context.task_stacks[label.removeprefix("stack:")] = region
        else:
            context.buffers.append(region)

    if context.stack_base is None:
        first = context.task_stacks[due[0].name]
        context.stack_base, context.stack_size = first.start_address, first.size
    machine.drop_to_unprivileged(stack_top(context.stack_base, context.stack_size))
    logger.debug(
        "Cycle view ready", cycle=cycle, stack_base=hex(context.stack_base), retries=context.retries
    )
    return context


def end_cycle_ctomp(
    machine: Machine,
    engine: CycleOrientedEngine,
    timer: SoftTimer,
    executed: Sequence[Task],
    context: CycleContext,
) -> None:
    """SVC back to privileged, commit the soft timer, release the pool"""
    if not context.degraded:
        machine.svc_call()
    timer.advance(executed, machine)
    for region in context.regions:
        engine.allocator.mem_free(region.handle)
    context.regions = []
