# ctomp/core/memory_model.py
"""Simulated MCU address space with MPU region checks, execution levels and
the main/process dual-stack discipline.

Permission lookup is first-match: per-cycle (or per-task) regions are searched
in the order they were configured, then the boot-time background regions. An
address covered by no region falls back to the default policy, which allows
privileged and handler code and denies unprivileged code.
"""

import bisect
import hashlib
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ..models.base import Access, FaultKind, PrivilegeMode, SegmentKind, StackKind
from ..utils.exceptions import (
    CapacityExceededError,
    InvalidStackError,
    PrivilegeViolationError,
)
from ..utils.logging_manager import LoggingManager
from .timing import TimeModel

logger = LoggingManager.get_logger(__name__)

Address = int

ADDRESS_SPACE_SIZE = 1 << 32
SEGMENT_ALIGNMENT = 8
DEFAULT_MPU_CAPACITY = 16
# MPU region base address register, written by every region update
MPU_RBAR_ADDRESS = 0xE000ED9C


@dataclass(frozen=True, slots=True)
class Segment:
    kind: SegmentKind
    base: Address
    size: int
    name: str = ""

    @property
    def end(self) -> Address:
        return self.base + self.size - 1

    def contains(self, addr: Address) -> bool:
        return self.base <= addr <= self.end

    @property
    def label(self) -> str:
        return self.name or self.kind.value


@dataclass(frozen=True, slots=True)
class Symbol:
    """A named protected asset or task datum (kill, pid_params, SYST_RVR, ...)"""

    name: str
    address: Address
    size: int = 4


def check_layout(segments: Iterable[Segment], address_space: int = ADDRESS_SPACE_SIZE) -> None:
    """Raise ValueError unless the segments are aligned, named uniquely, inside
    the address space and pairwise disjoint"""
    labels = set()
    previous = None
    for segment in sorted(segments, key=lambda s: s.base):
        if segment.size <= 0:
            raise ValueError(f"Segment {segment.label} must have a positive size")
        if segment.base % SEGMENT_ALIGNMENT:
            raise ValueError(
                f"Segment {segment.label} base 0x{segment.base:08x} is not "
                f"{SEGMENT_ALIGNMENT}-byte aligned"
            )
        if segment.end >= address_space:
            raise ValueError(f"Segment {segment.label} exceeds the address space")
        if segment.label in labels:
            raise ValueError(f"Duplicate segment name {segment.label}")
        if previous is not None and previous.end >= segment.base:
            raise ValueError(f"Segments {previous.label} and {segment.label} overlap")
        labels.add(segment.label)
        previous = segment


class MemoryMap:
    """Flat address space made of disjoint segments, each backed by its own bytes"""

    def __init__(
        self,
        segments: Iterable[Segment],
        address_space: int = ADDRESS_SPACE_SIZE,
        symbols: Optional[Iterable[Symbol]] = None,
    ):
        self.address_space = address_space
        self.segments: list[Segment] = sorted(segments, key=lambda s: s.base)
        check_layout(self.segments, address_space)
        self._bases = [s.base for s in self.segments]
        self._buffers: dict[str, bytearray] = {
            s.label: bytearray(s.size) for s in self.segments
        }
        self.symbols: dict[str, Symbol] = {}
        for symbol in symbols or ():
            self.add_symbol(symbol)

    def in_space(self, addr: Address) -> bool:
        return 0 <= addr < self.address_space

    def segment_at(self, addr: Address) -> Optional[Segment]:
        index = bisect.bisect_right(self._bases, addr) - 1
        if index >= 0 and self.segments[index].contains(addr):
            return self.segments[index]
        return None

    def is_mapped(self, addr: Address, size: int = 1) -> bool:
        segment = self.segment_at(addr)
        return segment is not None and segment.contains(addr + size - 1)

    def segments_of_kind(self, kind: SegmentKind) -> list[Segment]:
        return [s for s in self.segments if s.kind == kind]

    @property
    def pool_segment(self) -> Optional[Segment]:
        pools = self.segments_of_kind(SegmentKind.POOL)
        return pools[0] if pools else None

    def add_symbol(self, symbol: Symbol) -> None:
        if symbol.size <= 0:
            raise ValueError(f"Symbol {symbol.name} must have a positive size")
        if not self.is_mapped(symbol.address, symbol.size):
            raise ValueError(
                f"Symbol {symbol.name} at 0x{symbol.address:08x} is not inside a mapped segment"
            )
        self.symbols[symbol.name] = symbol

    def resolve(self, name: str) -> Address:
        return self.symbols[name].address

    def symbol(self, name: str) -> Symbol:
        return self.symbols[name]

    def _locate(self, addr: Address, length: int) -> tuple[bytearray, int]:
        segment = self.segment_at(addr)
        if segment is None or not segment.contains(addr + max(length, 1) - 1):
            raise ValueError(f"Range 0x{addr:08x}+{length} is not inside one mapped segment")
        return self._buffers[segment.label], addr - segment.base

    def read(self, addr: Address, length: int) -> bytes:
        buffer, offset = self._locate(addr, length)
        return bytes(buffer[offset : offset + length])

    def write(self, addr: Address, data: bytes) -> None:
        buffer, offset = self._locate(addr, len(data))
        buffer[offset : offset + len(data)] = data

    def snapshot(self) -> dict[str, bytes]:
        return {label: bytes(buf) for label, buf in self._buffers.items()}

    def restore(self, snapshot: Mapping[str, bytes]) -> None:
        for label, data in snapshot.items():
            self._buffers[label][:] = data

    def digest(self) -> str:
        h = hashlib.sha256()
        for segment in self.segments:
            h.update(segment.base.to_bytes(8, "little"))
            h.update(self._buffers[segment.label])
        return h.hexdigest()


@dataclass(frozen=True, slots=True, eq=False)
class MpuRegion:
    base: Address
    size: int
    perms: Mapping[PrivilegeMode, frozenset[Access]]
    name: str = ""

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError(f"MPU region {self.name or hex(self.base)} must have a positive size")
        if self.base < 0 or self.base + self.size > ADDRESS_SPACE_SIZE:
            raise ValueError(f"MPU region {self.name or hex(self.base)} leaves the address space")
        object.__setattr__(
            self, "perms", MappingProxyType({m: frozenset(a) for m, a in self.perms.items()})
        )

    @classmethod
    def build(
        cls, base: Address, size: int, privileged: str = "rwx", unprivileged: str = "", name: str = ""
    ) -> "MpuRegion":
        """Shorthand taking permission strings such as "rx" per execution level"""
        return cls(
            base=base,
            size=size,
            perms={
                PrivilegeMode.PRIVILEGED: Access.parse_set(privileged),
                PrivilegeMode.UNPRIVILEGED: Access.parse_set(unprivileged),
            },
            name=name,
        )

    @property
    def end(self) -> Address:
        return self.base + self.size - 1

    def contains(self, addr: Address) -> bool:
        return self.base <= addr <= self.end

    def allowed(self, mode: PrivilegeMode) -> frozenset[Access]:
        if mode in self.perms:
            return self.perms[mode]
        # Handler code runs with privileged rights unless a region says otherwise.
        if mode == PrivilegeMode.HANDLER:
            return self.perms.get(PrivilegeMode.PRIVILEGED, frozenset())
        return frozenset()

    def grants(self, mode: PrivilegeMode, access: Access) -> bool:
        return access in self.allowed(mode)


@dataclass(frozen=True, slots=True)
class Allowed:
    """Positive result of check_access; region is None when the default policy decided"""

    region: Optional[str] = None

    def __bool__(self) -> bool:
        return True


@dataclass(frozen=True, slots=True)
class FaultEvent:
    kind: FaultKind
    address: Address
    access: Access
    mode: PrivilegeMode
    region: Optional[str] = None

    def __bool__(self) -> bool:
        return False


AccessResult = Allowed | FaultEvent


class MpuConfig:
    """Ordered MPU program: per-cycle regions first, then boot-time background regions"""

    def __init__(self, capacity: int = DEFAULT_MPU_CAPACITY):
        self.capacity = capacity
        self.regions: list[MpuRegion] = []
        self.background: list[MpuRegion] = []

    def __len__(self) -> int:
        return len(self.regions) + len(self.background)

    @property
    def ordered(self) -> list[MpuRegion]:
        return [*self.regions, *self.background]

    def _ensure_room(self, extra: int = 1) -> None:
        if len(self) + extra > self.capacity:
            raise CapacityExceededError(len(self) + extra, self.capacity)

    def append(self, region: MpuRegion) -> None:
        self._ensure_room()
        self.regions.append(region)

    def append_background(self, region: MpuRegion) -> None:
        self._ensure_room()
        self.background.append(region)

    def lookup(self, addr: Address) -> Optional[MpuRegion]:
        for region in self.regions:
            if region.contains(addr):
                return region
        for region in self.background:
            if region.contains(addr):
                return region
        return None


def evaluate_access(
    config: MpuConfig, mode: PrivilegeMode, addr: Address, access: Access
) -> AccessResult:
    """Pure permission decision for (config, mode, addr, access)"""
    region = config.lookup(addr)
    if region is not None:
        if region.grants(mode, access):
            return Allowed(region.name or None)
        return FaultEvent(FaultKind.MPU_FAULT, addr, access, mode, region.name or None)
    if mode == PrivilegeMode.UNPRIVILEGED:
        return FaultEvent(FaultKind.MPU_FAULT, addr, access, mode)
    return Allowed()


@dataclass(slots=True)
class StackSelect:
    active: StackKind = StackKind.MAIN
    msp: Address = 0
    psp: Address = 0


@dataclass(frozen=True, slots=True)
class ModeTransition:
    source: PrivilegeMode
    target: PrivilegeMode
    reason: str
    clock_us: float


@dataclass(frozen=True, slots=True)
class TaskStep:
    task: str
    mode: PrivilegeMode
    stack: StackKind
    clock_us: float
    sp: Address = 0


@dataclass(slots=True)
class MachineSnapshot:
    memory: dict[str, bytes]
    mode: PrivilegeMode
    stacks: StackSelect
    clock_us: float
    charges: dict[str, float]
    regions: list[MpuRegion]
    transitions: int
    faults: int
    task_steps: int
    pool_state: Optional[tuple] = None


class Machine:
    """One simulated MCU: memory map, MPU, execution level, stack pointers and a clock.

    The clock advances only through charged operations; charges are also kept per
    category (mpu, switch, stack, svc, alloc, exec, boot) so that protection
    overhead can be re-derived from a run.
    """

    def __init__(
        self,
        memory: MemoryMap,
        time_model: Optional[TimeModel] = None,
        mpu_capacity: int = DEFAULT_MPU_CAPACITY,
        main_stack: Address = 0,
        rng: Optional[np.random.Generator] = None,
    ):
        self.memory = memory
        self.time_model = time_model or TimeModel()
        self.mpu = MpuConfig(mpu_capacity)
        self.mode = PrivilegeMode.PRIVILEGED
        self.stacks = StackSelect(active=StackKind.MAIN, msp=main_stack)
        self.clock_us = 0.0
        self.charges: dict[str, float] = {}
        self.transitions: list[ModeTransition] = []
        self.faults: list[FaultEvent] = []
        self.task_steps: list[TaskStep] = []
        self.static_stacks: list[tuple[Address, int]] = []
        self.allocator = None
        self.rng = rng

    # -- clock -----------------------------------------------------------

    def charge(self, category: str, microseconds: float) -> None:
        self.clock_us += microseconds
        self.charges[category] = self.charges.get(category, 0.0) + microseconds

    def charged(self, category: str) -> float:
        return self.charges.get(category, 0.0)

    # -- permission checks -----------------------------------------------

    def check_access(
        self, addr: Address, access: Access, mode: Optional[PrivilegeMode] = None
    ) -> AccessResult:
        if not self.memory.in_space(addr):
            raise ValueError(f"Address 0x{addr:08x} is outside the simulated address space")
        return evaluate_access(self.mpu, mode or self.mode, addr, access)

    def check_range(self, addr: Address, length: int, access: Access) -> AccessResult:
        """Check every byte of [addr, addr+length-1]; the first denial is returned"""
        result: AccessResult = Allowed()
        for offset in range(max(length, 1)):
            result = self.check_access(addr + offset, access)
            if isinstance(result, FaultEvent):
                return result
        return result

    def access(self, addr: Address, access: Access, length: int = 1) -> AccessResult:
        """check_range plus fault bookkeeping"""
        result = self.check_range(addr, length, access)
        if isinstance(result, FaultEvent):
            self.faults.append(result)
            logger.debug(
                "MPU fault", address=hex(addr), access=access.value, mode=self.mode.value
            )
        return result

    def write(self, addr: Address, data: bytes) -> AccessResult:
        result = self.access(addr, Access.WRITE, len(data))
        if isinstance(result, Allowed):
            self.memory.write(addr, data)
        return result

    def read(self, addr: Address, length: int) -> bytes | FaultEvent:
        result = self.access(addr, Access.READ, length)
        if isinstance(result, FaultEvent):
            return result
        return self.memory.read(addr, length)

    # -- MPU programming -------------------------------------------------

    def _require_privileged(self, operation: str) -> None:
        if self.mode == PrivilegeMode.UNPRIVILEGED:
            self.faults.append(
                FaultEvent(FaultKind.PRIVILEGE_VIOLATION, MPU_RBAR_ADDRESS, Access.WRITE, self.mode)
            )
            raise PrivilegeViolationError(operation, self.mode.value)

    def configure_mpu(self, region: MpuRegion) -> None:
        self._require_privileged("configure_mpu")
        self.mpu.append(region)
        self.charge("mpu", self.time_model.mpu_cost(self.rng))

    def configure_background(self, region: MpuRegion) -> None:
        """Boot-time region, searched after every per-cycle region"""
        self._require_privileged("configure_background")
        self.mpu.append_background(region)
        self.charge("boot", self.time_model.mpu_cost(self.rng))

    def clear_regions(self) -> None:
        self._require_privileged("clear_regions")
        self.mpu.regions.clear()

    # -- execution levels ------------------------------------------------

    def _transition(self, target: PrivilegeMode, reason: str) -> None:
        self.transitions.append(ModeTransition(self.mode, target, reason, self.clock_us))
        self.mode = target

    def svc_call(self) -> None:
        """SVC into the handler, then exception return to privileged thread mode on MSP"""
        self._transition(PrivilegeMode.HANDLER, "svc")
        self.charge("svc", self.time_model.t_svc)
        self._transition(PrivilegeMode.PRIVILEGED, "exception_return")
        self.stacks.active = StackKind.MAIN
        self.charge("switch", self.time_model.t_switch)

    def drop_to_unprivileged(self, psp: Address) -> None:
        if self.mode != PrivilegeMode.PRIVILEGED:
            raise PrivilegeViolationError("drop_to_unprivileged", self.mode.value)
        self._validate_stack(psp)
        self.stacks.psp = psp
        self.stacks.active = StackKind.PROCESS
        self.charge("stack", self.time_model.t_stack)
        self._transition(PrivilegeMode.UNPRIVILEGED, "control_write")
        self.charge("switch", self.time_model.t_switch)

    def set_process_stack(self, psp: Address) -> None:
        """RTOS context switch re-pointing PSP at another task's stack"""
        self._validate_stack(psp)
        self.stacks.psp = psp

    def register_static_stack(self, start: Address, size: int) -> None:
        if not self.memory.is_mapped(start, size):
            raise InvalidStackError(start, "static stack is not inside mapped memory")
        self.static_stacks.append((start, size))

    def stack_region_of(self, psp: Address) -> Optional[tuple[Address, int]]:
        if self.allocator is not None:
            for region in self.allocator.table.regions:
                if region.start_address <= psp <= region.end_address:
                    return region.start_address, region.size
        for start, size in self.static_stacks:
            if start <= psp < start + size:
                return start, size
        return None

    def _validate_stack(self, psp: Address) -> None:
        if self.stack_region_of(psp) is None:
            raise InvalidStackError(psp, "not inside any allocated region")

    # -- task execution --------------------------------------------------

    def execute_task(
        self, task: str, exec_time_us: float, touches: Sequence[tuple[Address, Access]] = ()
    ) -> list[FaultEvent]:
        sp = self.stacks.psp if self.stacks.active == StackKind.PROCESS else self.stacks.msp
        self.task_steps.append(TaskStep(task, self.mode, self.stacks.active, self.clock_us, sp))
        self.charge("exec", exec_time_us)
        faults = []
        for addr, access in touches:
            result = self.access(addr, access)
            if isinstance(result, FaultEvent):
                faults.append(result)
        return faults

    # -- adjudication support --------------------------------------------

    def snapshot(self) -> MachineSnapshot:
        return MachineSnapshot(
            memory=self.memory.snapshot(),
            mode=self.mode,
            stacks=StackSelect(self.stacks.active, self.stacks.msp, self.stacks.psp),
            clock_us=self.clock_us,
            charges=dict(self.charges),
            regions=list(self.mpu.regions),
            transitions=len(self.transitions),
            faults=len(self.faults),
            task_steps=len(self.task_steps),
            pool_state=self.allocator.table.snapshot() if self.allocator is not None else None,
        )

    def restore(self, snap: MachineSnapshot) -> None:
        self.memory.restore(snap.memory)
        self.mode = snap.mode
        self.stacks = StackSelect(snap.stacks.active, snap.stacks.msp, snap.stacks.psp)
        self.clock_us = snap.clock_us
        self.charges = dict(snap.charges)
        self.mpu.regions[:] = snap.regions
        del self.transitions[snap.transitions :]
        del self.faults[snap.faults :]
        del self.task_steps[snap.task_steps :]
        if self.allocator is not None and snap.pool_state is not None:
            self.allocator.table.restore(snap.pool_state)

    def digest(self) -> str:
        h = hashlib.sha256(self.memory.digest().encode())
        h.update(self.mode.value.encode())
        h.update(repr(round(self.clock_us, 6)).encode())
        return h.hexdigest()
