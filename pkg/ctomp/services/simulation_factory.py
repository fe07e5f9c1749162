# ctomp/services/simulation_factory.py
"""Turns a validated Scenario into a booted machine plus its protection engine."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..config import Settings, settings as default_settings
from ..core.allocator import (
    EntropySource,
    MemoryPool,
    OsEntropySource,
    PoolAllocator,
    RegionTable,
    SeededEntropySource,
)
from ..core.attack_harness import (
    Action,
    AttackerKnowledge,
    AttackScript,
    CallAddr,
    Gadget,
    GadgetChain,
    InjectShellcode,
    OverwriteReturn,
    WriteMem,
)
from ..core.cycle_scheduler import CycleConfig, SoftTimer, Task, Touch
from ..core.memory_model import Machine, MemoryMap, MpuRegion, Segment, Symbol
from ..core.protection_engine import (
    CycleOrientedEngine,
    NoProtection,
    ProtectionEngine,
    TaskOrientedEngine,
    stack_top,
)
from ..core.timing import TimeModel
from ..models.base import SchemeVariant
from ..models.scenario import ActionSpec, Scenario
from ..utils.exceptions import ConfigurationError, ScenarioValidationError
from ..utils.logging_manager import LoggingManager

logger = LoggingManager.get_logger(__name__)

SOFT_TIMER_SYMBOL = "soft_timer"


@dataclass(frozen=True, slots=True)
class SimulationParams:
    """Settings with the scenario's overrides applied"""

    time_model: TimeModel
    pool_size: int
    max_allocate_num: int
    alignment: int
    retry_budget: int
    strict: bool
    setup_attempts: int
    mpu_capacity: int
    guesses: int

    @classmethod
    def resolve(cls, scenario: Scenario, settings: Settings) -> "SimulationParams":
        timing = scenario.timing
        alloc = scenario.allocator

        def pick(override, fallback):
            return fallback if override is None else override

        try:
            time_model = TimeModel(
                t_mpu=pick(timing.t_mpu, settings.t_mpu),
                t_stack=pick(timing.t_stack, settings.t_stack),
                t_svc=pick(timing.t_svc, settings.t_svc),
                t_switch=pick(timing.t_switch, settings.t_switch),
                t_alloc=pick(timing.t_alloc, settings.t_alloc),
                mpu_jitter=pick(timing.mpu_jitter, settings.mpu_jitter),
                allow_out_of_range=settings.allow_out_of_range_timing,
            )
        except ConfigurationError as e:
            raise ScenarioValidationError(f"timing.{e.setting}", e.message) from e

        return cls(
            time_model=time_model,
            pool_size=pick(alloc.pool_size, settings.pool_size),
            max_allocate_num=pick(alloc.max_allocate_num, settings.max_allocate_num),
            alignment=pick(alloc.alignment, settings.alignment),
            retry_budget=pick(alloc.retry_budget, settings.retry_budget),
            strict=pick(alloc.strict, settings.strict_allocation),
            setup_attempts=settings.cycle_setup_attempts,
            mpu_capacity=settings.mpu_capacity,
            guesses=pick(scenario.attacker.guesses, settings.attacker_guesses),
        )


@dataclass(slots=True)
class Simulation:
    scenario: Scenario
    variant: SchemeVariant
    params: SimulationParams
    machine: Machine
    engine: ProtectionEngine
    tasks: list[Task]
    config: CycleConfig
    timer: SoftTimer
    attacker_rng: np.random.Generator

    @property
    def vulnerable(self) -> Optional[Task]:
        return next((t for t in self.tasks if t.vulnerable), None)

    def knowledge(self) -> AttackerKnowledge:
        return AttackerKnowledge.for_engine(self.engine, self.params.guesses)


class SimulationFactory:
    """Factory assembling simulations from scenarios"""

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or default_settings

    # -- memory ----------------------------------------------------------

    @staticmethod
    def build_memory(scenario: Scenario) -> MemoryMap:
        segments = [
            Segment(kind=s.kind, base=s.base, size=s.size, name=s.name)
            for s in scenario.memory.segments
        ]
        symbols = [
            Symbol(name, spec.address, spec.size) for name, spec in scenario.memory.symbols.items()
        ]
        try:
            return MemoryMap(segments, scenario.memory.address_space, symbols)
        except ValueError as e:
            raise ScenarioValidationError("memory", str(e)) from e

    @staticmethod
    def build_region(scenario: Scenario, name: str, memory: MemoryMap) -> MpuRegion:
        spec = scenario.regions[name]
        if spec.symbol is not None:
            symbol = memory.symbol(spec.symbol)
            base, size = symbol.address, symbol.size
        elif spec.segment is not None:
            segment = next(s for s in memory.segments if s.label == spec.segment)
            base, size = segment.base, segment.size
        else:
            base, size = spec.base, spec.size
        return MpuRegion.build(base, size, spec.privileged, spec.unprivileged, name=name)

    def build_regions(self, scenario: Scenario, names: list[str], memory: MemoryMap) -> list[MpuRegion]:
        return [self.build_region(scenario, name, memory) for name in names]

    # -- tasks and attacks -----------------------------------------------

    @staticmethod
    def build_tasks(scenario: Scenario, memory: MemoryMap) -> list[Task]:
        tasks = []
        for spec in scenario.tasks:
            touches = tuple(
                Touch(memory.resolve(symbol), access, symbol)
                for symbol, accesses in spec.parsed_touches()
                for access in sorted(accesses, key=lambda a: a.value)
            )
            tasks.append(
                Task(
                    name=spec.name,
                    priority=spec.priority,
                    aci=spec.aci,
                    exec_time_us=spec.exec_time_us,
                    touches=touches,
                    vulnerable=spec.vulnerable,
                )
            )
        return tasks

    @classmethod
    def build_action(cls, spec: ActionSpec, memory: MemoryMap) -> Action:
        match spec.kind:
            case "write_mem":
                data = spec.value.to_bytes(spec.width, "little")
                return WriteMem(memory.resolve(spec.target), data, spec.target)
            case "call_addr":
                return CallAddr(memory.resolve(spec.target), tuple(spec.args), spec.target)
            case "overwrite_return":
                return OverwriteReturn(memory.resolve(spec.target), spec.target)
            case _:
                body = tuple(cls.build_action(a, memory) for a in spec.body)
                return InjectShellcode(site=spec.site, body=body)

    @classmethod
    def build_attacks(cls, scenario: Scenario, memory: MemoryMap) -> list[AttackScript]:
        return [
            AttackScript(
                case_id=spec.case,
                name=spec.name,
                attack_type=spec.type,
                payload=tuple(cls.build_action(a, memory) for a in spec.payload),
                description=spec.description,
            )
            for spec in scenario.attacks
        ]

    @classmethod
    def build_chains(cls, scenario: Scenario, memory: MemoryMap) -> list[GadgetChain]:
        chains = []
        for spec in scenario.rop_chains:
            gadgets = tuple(
                Gadget(
                    memory.resolve(g.address),
                    tuple(cls.build_action(e, memory) for e in g.effects),
                    g.address,
                )
                for g in spec.gadgets
            )
            chains.append(GadgetChain(spec.name, gadgets))
        return chains

    # -- engines ---------------------------------------------------------

    def build_engine(
        self,
        scenario: Scenario,
        variant: SchemeVariant,
        memory: MemoryMap,
        params: SimulationParams,
        entropy: SeededEntropySource,
    ) -> ProtectionEngine:
        if variant == SchemeVariant.NONE:
            return NoProtection()

        if variant == SchemeVariant.TASK_ORIENTED:
            section = scenario.scheme.task_oriented
            if section is None:
                raise ScenarioValidationError("scheme.task_oriented", "section is missing")
            stack = memory.symbol(section.task_stack)
            views = {
                task: self.build_regions(scenario, regions, memory)
                for task, regions in section.views.items()
            }
            return TaskOrientedEngine(
                views=views,
                task_stack=(stack.address, stack.size),
                time_model=params.time_model,
                background=self.build_regions(scenario, section.background, memory),
            )

        section = scenario.scheme.cycle_oriented
        if section is None:
            raise ScenarioValidationError("scheme.cycle_oriented", "section is missing")
        pool_segment = memory.pool_segment
        if pool_segment is None:
            raise ScenarioValidationError("memory.segments", "the cycle-oriented scheme needs a pool segment")
        if pool_segment.size != params.pool_size:
            raise ScenarioValidationError(
                "allocator.pool_size",
                f"pool segment holds {pool_segment.size} bytes but the allocator expects {params.pool_size}",
                params.pool_size,
            )
        allocator = PoolAllocator(
            MemoryPool(pool_segment.base, params.pool_size, params.alignment),
            entropy,
            RegionTable(params.max_allocate_num),
            params.retry_budget,
        )
        return CycleOrientedEngine(
            cycle_regions=self.build_regions(scenario, section.regions, memory),
            buffer_sizes=section.buffers,
            stack_size=section.stack_size,
            allocator=allocator,
            time_model=params.time_model,
            allocation_order=section.order,
            stack_mode=section.stack_mode,
            background=self.build_regions(scenario, section.background, memory),
            strict=params.strict,
            setup_attempts=params.setup_attempts,
        )

    def build_entropy(self, seed_seq: np.random.SeedSequence) -> EntropySource:
        if self.settings.entropy_source == "os":
            logger.warning("Allocator draws from OS entropy, runs are not reproducible")
            return OsEntropySource()
        return SeededEntropySource(generator=np.random.default_rng(seed_seq))

    # -- assembly --------------------------------------------------------

    def create(
        self,
        scenario: Scenario,
        variant: Optional[SchemeVariant] = None,
        seed: Optional[int] = None,
    ) -> Simulation:
        """Build and boot one simulation; every random stream derives from `seed`"""
        variant = variant or scenario.scheme.default
        seed = scenario.scenario.seed if seed is None else seed
        params = SimulationParams.resolve(scenario, self.settings)

        alloc_seq, jitter_seq, attacker_seq = np.random.SeedSequence(seed).spawn(3)
        memory = self.build_memory(scenario)
        main_stack = memory.symbol(scenario.memory.main_stack)
        machine = Machine(
            memory,
            params.time_model,
            params.mpu_capacity,
            main_stack=stack_top(main_stack.address, main_stack.size),
            rng=np.random.default_rng(jitter_seq),
        )
        tasks = self.build_tasks(scenario, memory)
        engine = self.build_engine(scenario, variant, memory, params, self.build_entropy(alloc_seq))
        try:
            engine.validate(tasks)
        except ValueError as e:
            raise ScenarioValidationError(f"scheme.{variant.value}", str(e)) from e
        engine.attach(machine)

        timer_symbol = memory.symbols.get(SOFT_TIMER_SYMBOL)
        timer = SoftTimer(address=timer_symbol.address if timer_symbol else None)

        logger.debug("Simulation created", scenario=scenario.name, scheme=variant.value, seed=seed)
        return Simulation(
            scenario=scenario,
            variant=variant,
            params=params,
            machine=machine,
            engine=engine,
            tasks=tasks,
            config=CycleConfig(scenario.cycle.f_m),
            timer=timer,
            attacker_rng=np.random.default_rng(attacker_seq),
        )
