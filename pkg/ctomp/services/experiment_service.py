import time
from collections import Counter
from typing import Optional, Sequence

import numpy as np

from ..config import Settings, settings as default_settings
from ..core.allocator import (
    MemoryPool,
    PoolAllocator,
    RegionTable,
    SeededEntropySource,
    order_sizes,
)
from ..core.attack_harness import AttackOutcome, run_all_cases, run_rop
from ..core.cycle_scheduler import CycleTrace, expected_frequency, measured_frequency, run_horizon
from ..models.base import AllocationOrder, SchemeVariant
from ..models.responses import (
    AllocationRow,
    AllocationSummary,
    AttackCell,
    FrequencyRow,
    OverheadBreakdownModel,
    OverheadRow,
    Report,
    ReportMeta,
)
from ..models.scenario import Scenario
from ..utils.exceptions import ScenarioValidationError
from ..utils.logging_manager import LoggingManager
from .simulation_factory import Simulation, SimulationFactory, SimulationParams

logger = LoggingManager.get_logger(__name__)

BENCH_ORDERS = (AllocationOrder.ASCENDING, AllocationOrder.DESCENDING)


class ExperimentService:
    """Runs the simulator experiments and turns their results into reports"""

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or default_settings
        self.factory = SimulationFactory(self.settings)
        self.last_traces: dict[SchemeVariant, CycleTrace] = {}

    def _meta(self, scenario: Optional[Scenario], seed: int, **extra) -> ReportMeta:
        fields = {"seed": seed, "version": self.settings.version, **extra}
        if scenario is not None:
            params = SimulationParams.resolve(scenario, self.settings)
            fields.update(
                scenario=scenario.name,
                f_m=scenario.cycle.f_m,
                budget_us=1_000_000 / scenario.cycle.f_m,
                retry_budget=params.retry_budget,
                retry_budget_source=(
                    "settings" if scenario.allocator.retry_budget is None else "scenario"
                ),
                setup_attempts=params.setup_attempts,
            )
        return ReportMeta(**fields)

    def _override_warnings(self, scenario: Scenario) -> list[str]:
        budget = scenario.allocator.retry_budget
        if budget is None or budget == self.settings.retry_budget:
            return []
        return [
            f"scenario sets allocator.retry_budget = {budget} "
            f"(settings default {self.settings.retry_budget})"
        ]

    # -- frequency experiments -------------------------------------------

    def simulate(
        self, scenario: Scenario, variant: SchemeVariant, seed: int, horizon: int
    ) -> tuple[Simulation, CycleTrace]:
        sim = self.factory.create(scenario, variant, seed)
        trace = run_horizon(sim.machine, sim.engine, sim.tasks, sim.config, horizon, sim.timer)
        if trace.degraded_cycles:
            logger.warning(
                "Cycles ran unprotected after allocation failures",
                scheme=variant.value,
                degraded=trace.degraded_cycles,
            )
        return sim, trace

    def _overhead_row(self, sim: Simulation, trace: CycleTrace) -> OverheadRow:
        model = sim.engine.model_overhead(sim.tasks)
        allocator = getattr(sim.engine, "allocator", None)
        horizon = max(trace.horizon, 1)
        return OverheadRow(
            scheme=sim.variant,
            model=OverheadBreakdownModel(**model.as_dict()),
            measured_mean_us=trace.mean_overhead_us,
            measured_max_us=max((r.overhead_us for r in trace.records), default=0.0),
            alloc_mean_us=sum(r.alloc_us for r in trace.records) / horizon,
            mean_retries=allocator.stats.realloc_retries / horizon if allocator else 0.0,
            degraded_cycles=trace.degraded_cycles,
            max_used_us=trace.max_used_us,
            budget_us=sim.config.budget_us,
        )

    def cmd_compare(
        self,
        scenario: Scenario,
        schemes: Sequence[SchemeVariant],
        seed: Optional[int] = None,
        horizon: Optional[int] = None,
        kind: str = "compare",
    ) -> Report:
        seed = scenario.scenario.seed if seed is None else seed
        horizon = scenario.scenario.horizon if horizon is None else horizon
        schemes = list(dict.fromkeys(schemes))
        start_time = time.time()
        logger.info(
            "Running frequency experiment",
            scenario=scenario.name,
            schemes=[s.value for s in schemes],
            horizon=horizon,
            seed=seed,
        )

        rows: dict[str, FrequencyRow] = {}
        overheads = []
        warnings = self._override_warnings(scenario)
        self.last_traces = {}
        for variant in schemes:
            sim, trace = self.simulate(scenario, variant, seed, horizon)
            self.last_traces[variant] = trace
            overheads.append(self._overhead_row(sim, trace))
            if trace.degraded_cycles:
                warnings.append(
                    f"{variant.value}: {trace.degraded_cycles} of {trace.horizon} cycles ran unprotected"
                )
            for task in sim.tasks:
                row = rows.setdefault(
                    task.name,
                    FrequencyRow(
                        task=task.name,
                        priority=task.priority,
                        aci=task.aci,
                        expected_hz=expected_frequency(task, sim.config),
                    ),
                )
                measured = measured_frequency(trace, task)
                row.measured_hz[variant] = measured
                row.ratio[variant] = measured / row.expected_hz
                row.skipped[variant] = sum(1 for r in trace.records if task.name in r.skipped)

        logger.success(
            "Frequency experiment finished",
            scenario=scenario.name,
            total_time=round(time.time() - start_time, 2),
        )
        return Report(
            kind=kind,
            meta=self._meta(scenario, seed, horizon=horizon),
            schemes=schemes,
            frequencies=sorted(rows.values(), key=lambda r: (r.priority, r.task)),
            overheads=overheads,
            warnings=warnings,
        )

    def cmd_run(
        self,
        scenario: Scenario,
        scheme: Optional[SchemeVariant] = None,
        seed: Optional[int] = None,
        horizon: Optional[int] = None,
    ) -> Report:
        return self.cmd_compare(
            scenario, [scheme or scenario.scheme.default], seed, horizon, kind="run"
        )

    # -- attacks ---------------------------------------------------------

    @staticmethod
    def _cell(outcome: AttackOutcome, name: str, scheme: SchemeVariant) -> AttackCell:
        return AttackCell(
            case=outcome.case_id,
            name=name,
            scheme=scheme,
            verdict=outcome.verdict,
            detail=outcome.detail,
            trials=outcome.trials,
            success_rate=outcome.success_rate,
            closed_form=outcome.closed_form,
            ci_half_width=outcome.ci_half_width,
        )

    def cmd_attack_matrix(
        self,
        scenario: Scenario,
        schemes: Optional[Sequence[SchemeVariant]] = None,
        seed: Optional[int] = None,
        trials: Optional[int] = None,
    ) -> Report:
        if not scenario.attacks and not scenario.rop_chains:
            raise ScenarioValidationError("attacks", "scenario has no attack scripts")
        seed = scenario.scenario.seed if seed is None else seed
        trials = self.settings.attack_trials if trials is None else trials
        schemes = list(dict.fromkeys(schemes or list(SchemeVariant)))
        logger.info("Running attack matrix", scenario=scenario.name, trials=trials, seed=seed)

        cells = []
        for variant in schemes:
            sim = self.factory.create(scenario, variant, seed)
            memory = sim.machine.memory
            scripts = self.factory.build_attacks(scenario, memory)
            names = {s.case_id: s.name for s in scripts}
            outcomes = run_all_cases(
                sim.machine,
                sim.engine,
                scripts,
                sim.vulnerable,
                sim.tasks,
                knowledge=sim.knowledge(),
                rng=sim.attacker_rng,
                trials=trials,
                success_threshold=self.settings.attack_success_threshold,
            )
            cells += [self._cell(o, names[case], variant) for case, o in outcomes.items()]
            for chain in self.factory.build_chains(scenario, memory):
                outcome = run_rop(sim.machine, sim.engine, chain, sim.vulnerable, sim.tasks)
                cells.append(self._cell(outcome, chain.name, variant))

            succeeded = sum(1 for o in outcomes.values() if o.succeeded)
            logger.info(
                "Attack cases adjudicated",
                scheme=variant.value,
                succeeded=succeeded,
                total=len(outcomes),
            )

        return Report(
            kind="attack_matrix",
            meta=self._meta(scenario, seed, trials=trials),
            schemes=schemes,
            attacks=cells,
            warnings=self._override_warnings(scenario),
        )

    # -- allocation order ------------------------------------------------

    def cmd_alloc_bench(
        self,
        pool_size: Optional[int] = None,
        sizes: Optional[Sequence[int]] = None,
        trials: Optional[int] = None,
        seed: Optional[int] = None,
        alignment: Optional[int] = None,
        max_allocate_num: Optional[int] = None,
        retry_budget: Optional[int] = None,
    ) -> Report:
        """Ascending against descending placement of the same request set"""
        pool_size = pool_size or self.settings.pool_size
        sizes = list(sizes or [144, 304, 64, 64, 112, 1024])
        trials = self.settings.default_trials if trials is None else trials
        seed = self.settings.default_seed if seed is None else seed
        alignment = alignment or self.settings.alignment
        retry_budget = retry_budget or self.settings.retry_budget
        max_allocate_num = max_allocate_num or max(len(sizes), self.settings.max_allocate_num)
        if trials < 1:
            raise ValueError("trials must be at least 1")

        logger.info("Running allocation benchmark", sizes=sizes, trials=trials, seed=seed)
        rows = []
        for order in BENCH_ORDERS:
            allocator = PoolAllocator(
                MemoryPool(0, pool_size, alignment),
                SeededEntropySource(seed),
                RegionTable(max_allocate_num),
                retry_budget,
            )
            ordered = order_sizes(sizes, order)
            histogram: Counter = Counter()
            failures = 0
            for _ in range(trials):
                before = allocator.stats.realloc_retries
                if allocator.alloc_cycle_set(ordered) is None:
                    failures += 1
                histogram[allocator.stats.realloc_retries - before] += 1
                allocator.release_all()
            rows.append(
                AllocationRow(
                    order=order,
                    trials=trials,
                    mean_retries=allocator.stats.realloc_retries / trials,
                    failure_rate=failures / trials,
                    failures=failures,
                    retry_histogram=dict(sorted(histogram.items())),
                )
            )

        ascending, descending = rows[0].mean_retries, rows[1].mean_retries
        improvement = float(np.divide(ascending - descending, ascending)) if ascending else 0.0
        logger.info(
            "Allocation benchmark finished",
            ascending=round(ascending, 4),
            descending=round(descending, 4),
            improvement=round(improvement, 4),
        )
        return Report(
            kind="alloc_bench",
            meta=self._meta(None, seed, trials=trials),
            allocation=AllocationSummary(
                pool_size=pool_size,
                sizes=sizes,
                alignment=alignment,
                retry_budget=retry_budget,
                rows=rows,
                relative_improvement=improvement,
            ),
        )
