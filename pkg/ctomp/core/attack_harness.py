# ctomp/core/attack_harness.py
"""Attack scripts replayed as access checks against a protected machine.

An attack is never persisted: the machine is snapshotted before a script is
adjudicated and restored afterwards. Verdicts follow the first denial met:
a control transfer that only privileged code could make is blocked by
privilege, any other denial is blocked by the MPU. Shellcode whose entry
point depends on a randomized stack is adjudicated over many independent
cycles and reported with its empirical hit rate.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ..models.base import (
    Access,
    AttackType,
    PrivilegeMode,
    SegmentKind,
    StackKind,
    StackKnowledge,
    Verdict,
)
from ..utils.exceptions import InvalidScriptError
from ..utils.logging_manager import LoggingManager
from .allocator import PoolAllocator, shellcode_feasible_starts
from .cycle_scheduler import Task
from .memory_model import Address, FaultEvent, Machine, evaluate_access
from .protection_engine import CycleContext, ProtectionEngine

logger = LoggingManager.get_logger(__name__)

# Thumb NOP sled standing in for injected code
SHELLCODE_FILL = b"\x00\xbf"
SHELLCODE_SIZE = 32
# Bytes kept free above the injected image for the frame being smashed
STACK_RESERVE = 8
Z_95 = 1.959963984540054


@dataclass(frozen=True, slots=True)
class WriteMem:
    address: Address
    data: bytes
    symbol: Optional[str] = None


@dataclass(frozen=True, slots=True)
class CallAddr:
    address: Address
    args: tuple[int, ...] = ()
    symbol: Optional[str] = None


@dataclass(frozen=True, slots=True)
class OverwriteReturn:
    target: Address
    symbol: Optional[str] = None


@dataclass(frozen=True, slots=True)
class InjectShellcode:
    site: str = "stack"
    body: tuple[WriteMem, ...] = ()

    def __post_init__(self):
        if self.site not in ("stack", "buffer"):
            raise ValueError(f"Shellcode site must be 'stack' or 'buffer', got '{self.site}'")


Action = Union[WriteMem, CallAddr, OverwriteReturn, InjectShellcode]


@dataclass(frozen=True, slots=True)
class AttackerKnowledge:
    knows_static_addresses: bool = True
    knows_stack_base: StackKnowledge = StackKnowledge.EXACT
    guesses: int = 1

    @classmethod
    def for_engine(cls, engine: ProtectionEngine, guesses: int = 1) -> "AttackerKnowledge":
        return cls(knows_stack_base=engine.knowledge, guesses=guesses)


@dataclass(frozen=True, slots=True)
class AttackScript:
    case_id: str
    name: str
    attack_type: AttackType
    payload: tuple[Action, ...]
    description: str = ""


@dataclass(frozen=True, slots=True)
class Gadget:
    address: Address
    effects: tuple[WriteMem, ...] = ()
    symbol: Optional[str] = None


@dataclass(frozen=True, slots=True)
class GadgetChain:
    name: str
    gadgets: tuple[Gadget, ...] = ()


@dataclass(slots=True)
class AttackOutcome:
    case_id: str
    verdict: Verdict
    detail: dict = field(default_factory=dict)
    trials: int = 1
    success_rate: Optional[float] = None
    closed_form: Optional[float] = None
    ci_half_width: Optional[float] = None

    @property
    def succeeded(self) -> bool:
        return self.verdict == Verdict.SUCCEEDED


def shellcode_success_probability(
    pool_size: int, stack_size: int, alignment: int, retries_per_cycle: int = 1
) -> float:
    """Chance that `retries_per_cycle` distinct entry guesses hit the randomized stack"""
    if stack_size > pool_size:
        raise ValueError("The stack cannot be larger than the pool")
    feasible = shellcode_feasible_starts(pool_size, stack_size, alignment)
    return min(1.0, retries_per_cycle / feasible)


def _fault_detail(fault: FaultEvent, step: str) -> dict:
    return {
        "step": step,
        "kind": fault.kind.value,
        "address": f"0x{fault.address:08x}",
        "access": fault.access.value,
        "mode": fault.mode.value,
        "region": fault.region,
    }


def _transfer_verdict(machine: Machine, target: Address) -> tuple[Optional[Verdict], Optional[FaultEvent]]:
    result = machine.access(target, Access.EXECUTE)
    if not isinstance(result, FaultEvent):
        return None, None
    privileged = evaluate_access(machine.mpu, PrivilegeMode.PRIVILEGED, target, Access.EXECUTE)
    if not isinstance(privileged, FaultEvent):
        return Verdict.BLOCKED_BY_PRIVILEGE, result
    return Verdict.BLOCKED_BY_MPU, result


def _action_addresses(action: Action) -> list[tuple[Address, int]]:
    match action:
        case WriteMem(address=address, data=data):
            return [(address, max(len(data), 1))]
        case CallAddr(address=address) | OverwriteReturn(target=address):
            return [(address, 1)]
        case InjectShellcode(body=body):
            return [pair for write in body for pair in _action_addresses(write)]
    return []


def validate_script(machine: Machine, script: AttackScript) -> None:
    for action in script.payload:
        for address, length in _action_addresses(action):
            if not machine.memory.is_mapped(address, length):
                raise InvalidScriptError(script.name, f"address 0x{address:08x} is not mapped")


class AttackHarness:
    """Adjudicates scripts from inside a vulnerable task's execution context"""

    def __init__(
        self,
        machine: Machine,
        engine: ProtectionEngine,
        knowledge: Optional[AttackerKnowledge] = None,
        rng: Optional[np.random.Generator] = None,
        trials: int = 1,
        success_threshold: float = 0.5,
    ):
        if trials < 1:
            raise ValueError("trials must be at least 1")
        if not 0.0 < success_threshold <= 1.0:
            raise ValueError("success_threshold must lie in (0, 1]")
        self.machine = machine
        self.engine = engine
        self.knowledge = knowledge or AttackerKnowledge.for_engine(engine)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.trials = trials
        self.success_threshold = success_threshold
        self.context: Optional[CycleContext] = None
        self._due: list[Task] = []
        self._boot_snapshot = None

    # -- context ---------------------------------------------------------

    def enter(self, vulnerable: Task, tasks: Sequence[Task]) -> CycleContext:
        """Start a cycle and stop inside the vulnerable task"""
        self._boot_snapshot = self.machine.snapshot()
        self._due = sorted(tasks, key=lambda t: t.sort_key)
        self.context = self.engine.begin_cycle(self.machine, self._due, cycle=0)
        self.engine.enter_task(self.machine, vulnerable, self.context)
        return self.context

    def leave(self) -> None:
        if self._boot_snapshot is not None:
            self.machine.restore(self._boot_snapshot)
        self.context = None
        self._due = []
        self._boot_snapshot = None

    # -- adjudication ----------------------------------------------------

    def run_attack(self, script: AttackScript) -> AttackOutcome:
        if self.context is None:
            raise RuntimeError("run_attack needs an active task context; call enter() first")
        validate_script(self.machine, script)
        snapshot = self.machine.snapshot()
        try:
            outcome = self._adjudicate(script)
        finally:
            self.machine.restore(snapshot)
        logger.debug("Attack adjudicated", case=script.case_id, verdict=outcome.verdict.value)
        return outcome

    def _adjudicate(self, script: AttackScript) -> AttackOutcome:
        applied: list[WriteMem] = []
        outcome: Optional[AttackOutcome] = None
        for action in script.payload:
            match action:
                case WriteMem():
                    result = self.machine.write(action.address, action.data)
                    if isinstance(result, FaultEvent):
                        return AttackOutcome(
                            script.case_id, Verdict.BLOCKED_BY_MPU, _fault_detail(result, "write")
                        )
                    applied.append(action)
                case CallAddr() | OverwriteReturn():
                    target = action.address if isinstance(action, CallAddr) else action.target
                    if isinstance(action, OverwriteReturn):
                        blocked = self._write_return_slot(script, target)
                        if blocked is not None:
                            return blocked
                    verdict, fault = _transfer_verdict(self.machine, target)
                    if verdict is not None:
                        return AttackOutcome(script.case_id, verdict, _fault_detail(fault, "transfer"))
                case InjectShellcode():
                    outcome = self._inject(script, action)
                    if not outcome.succeeded:
                        return outcome
        if outcome is None:
            outcome = AttackOutcome(script.case_id, Verdict.SUCCEEDED)
        outcome.detail.setdefault("effects", len(applied))
        return outcome

    def _write_return_slot(self, script: AttackScript, target: Address) -> Optional[AttackOutcome]:
        stacks = self.machine.stacks
        slot = stacks.psp if stacks.active == StackKind.PROCESS else stacks.msp - 4
        result = self.machine.write(slot, target.to_bytes(4, "little"))
        if isinstance(result, FaultEvent):
            return AttackOutcome(script.case_id, Verdict.BLOCKED_BY_MPU, _fault_detail(result, "return_slot"))
        return None

    def _site(self, shellcode: InjectShellcode) -> tuple[Address, int]:
        """True base and size of the injection site in the current cycle"""
        if shellcode.site == "buffer" and self.context.buffers:
            buffer = self.context.buffers[0]
            return buffer.start_address, buffer.size
        if self.context.stack_size:
            return self.context.stack_base, self.context.stack_size
        return self.machine.stacks.msp - SHELLCODE_SIZE, SHELLCODE_SIZE

    def _inject(self, script: AttackScript, shellcode: InjectShellcode) -> AttackOutcome:
        base, size = self._site(shellcode)
        image_size = min(SHELLCODE_SIZE, size)
        entry = base + size - STACK_RESERVE - image_size if size > STACK_RESERVE + image_size else base
        image = (SHELLCODE_FILL * image_size)[:image_size]

        written = self.machine.write(entry, image)
        if isinstance(written, FaultEvent):
            return AttackOutcome(script.case_id, Verdict.BLOCKED_BY_MPU, _fault_detail(written, "inject"))

        for write in shellcode.body:
            result = self.machine.check_range(write.address, max(len(write.data), 1), Access.WRITE)
            if isinstance(result, FaultEvent):
                self.machine.faults.append(result)
                return AttackOutcome(script.case_id, Verdict.BLOCKED_BY_MPU, _fault_detail(result, "shellcode"))

        outcome = self._guess_entry(script, base, size)
        if not outcome.succeeded:
            return outcome

        verdict, fault = _transfer_verdict(self.machine, entry)
        if verdict is not None:
            return AttackOutcome(script.case_id, verdict, _fault_detail(fault, "entry"))

        for write in shellcode.body:
            self.machine.memory.write(write.address, write.data)
        outcome.detail["entry"] = f"0x{entry:08x}"
        return outcome

    def _site_index(self, site_base: Address, site_size: int) -> Optional[int]:
        for index, region in enumerate(self.context.regions):
            if region.start_address == site_base and region.size == site_size:
                return index
        return None

    def _sample_site_bases(self, allocator: PoolAllocator, index: int) -> np.ndarray:
        """True site bases over independent cycles; -1 where the cycle degraded"""
        sizes = [size for _, size in self.engine.allocation_requests(self._due)]
        attempts = getattr(self.engine, "setup_attempts", 1)
        return allocator.sample_cycle_placements(sizes, self.trials, attempts)[:, index]

    def _guess_entry(self, script: AttackScript, site_base: Address, site_size: int) -> AttackOutcome:
        allocator = getattr(self.engine, "allocator", None)
        # Without a pool the site never moves, so a guess is as good as knowing it.
        if self.knowledge.knows_stack_base == StackKnowledge.EXACT or allocator is None:
            return AttackOutcome(script.case_id, Verdict.SUCCEEDED, {"knowledge": "exact"})
        index = self._site_index(site_base, site_size)
        if index is None:
            # Degraded cycle: the site sits on the main stack.
            return AttackOutcome(
                script.case_id, Verdict.SUCCEEDED, {"knowledge": "exact", "degraded": True}
            )

        pool = allocator.pool
        feasible = pool.feasible_starts(site_size)
        k = min(self.knowledge.guesses, feasible)
        closed_form = shellcode_success_probability(pool.size, site_size, pool.alignment, k)

        if self.trials == 1:
            # One cycle: the attacker's window of k guesses against the live base.
            true_bases = np.array([site_base])
        else:
            true_bases = self._sample_site_bases(allocator, index)
        randomized = true_bases >= 0
        true_index = (true_bases - pool.base) // pool.alignment
        first_guess = self.rng.integers(0, feasible, size=len(true_bases))
        # A cycle that could not be placed runs on the known main stack.
        hits = ~randomized | ((true_index - first_guess) % feasible < k)

        rate = float(hits.mean())
        half_width = Z_95 * math.sqrt(rate * (1 - rate) / len(hits))
        verdict = (
            Verdict.SUCCEEDED if rate >= self.success_threshold else Verdict.DEFEATED_BY_RANDOMIZATION
        )
        return AttackOutcome(
            script.case_id,
            verdict,
            {
                "knowledge": "guess",
                "feasible_starts": feasible,
                "guesses": k,
                "degraded_trials": int((~randomized).sum()),
                "threshold": self.success_threshold,
            },
            trials=len(hits),
            success_rate=rate,
            closed_form=closed_form,
            ci_half_width=half_width,
        )

    # -- ROP -------------------------------------------------------------

    def run_rop(self, chain: GadgetChain) -> AttackOutcome:
        if self.context is None:
            raise RuntimeError("run_rop needs an active task context; call enter() first")
        for gadget in chain.gadgets:
            segment = self.machine.memory.segment_at(gadget.address)
            if segment is None or segment.kind != SegmentKind.CODE:
                raise InvalidScriptError(
                    chain.name, f"gadget 0x{gadget.address:08x} is not in the code segment"
                )
        snapshot = self.machine.snapshot()
        try:
            return self._adjudicate_chain(chain)
        finally:
            self.machine.restore(snapshot)

    def _adjudicate_chain(self, chain: GadgetChain) -> AttackOutcome:
        effects = 0
        for index, gadget in enumerate(chain.gadgets):
            verdict, fault = _transfer_verdict(self.machine, gadget.address)
            if verdict is not None:
                return AttackOutcome(chain.name, verdict, {**_fault_detail(fault, "gadget"), "gadget": index})
            for write in gadget.effects:
                result = self.machine.write(write.address, write.data)
                if isinstance(result, FaultEvent):
                    return AttackOutcome(
                        chain.name,
                        Verdict.BLOCKED_BY_MPU,
                        {**_fault_detail(result, "gadget_effect"), "gadget": index},
                    )
                effects += 1
        return AttackOutcome(chain.name, Verdict.SUCCEEDED, {"gadgets": len(chain.gadgets), "effects": effects})


def run_all_cases(
    machine: Machine,
    engine: ProtectionEngine,
    scripts: Sequence[AttackScript],
    vulnerable: Task,
    tasks: Sequence[Task],
    knowledge: Optional[AttackerKnowledge] = None,
    rng: Optional[np.random.Generator] = None,
    trials: int = 1,
    success_threshold: float = 0.5,
) -> dict[str, AttackOutcome]:
    harness = AttackHarness(machine, engine, knowledge, rng, trials, success_threshold)
    harness.enter(vulnerable, tasks)
    try:
        return {script.case_id: harness.run_attack(script) for script in scripts}
    finally:
        harness.leave()


def run_rop(
    machine: Machine,
    engine: ProtectionEngine,
    chain: GadgetChain,
    vulnerable: Task,
    tasks: Sequence[Task],
) -> AttackOutcome:
    harness = AttackHarness(machine, engine)
    harness.enter(vulnerable, tasks)
    try:
        return harness.run_rop(chain)
    finally:
        harness.leave()
