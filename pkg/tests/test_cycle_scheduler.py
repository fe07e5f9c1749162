import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st

from ctomp.config import Settings
from ctomp.core.allocator import OsEntropySource, SeededEntropySource

from ctomp.core.cycle_scheduler import (
    CycleConfig,
    CycleTrace,
    SoftTimer,
    Task,
    due_tasks,
    expected_frequency,
    measured_frequency,
    run_cycle,
    run_horizon,
)
from ctomp.core.memory_model import MemoryMap, Machine, Segment
from ctomp.core.protection_engine import NoProtection
from ctomp.models.base import PrivilegeMode, SchemeVariant, SegmentKind
from ctomp.services.simulation_factory import SimulationFactory
from ctomp.utils.exceptions import BudgetUnderflowError, MemoryFaultError

from .conftest import DATA_BASE


def _machine() -> Machine:
    memory = MemoryMap([Segment(SegmentKind.DATA, DATA_BASE, 0x1000, "data")])
    return Machine(memory, main_stack=DATA_BASE + 0xFF8)


def test_expected_frequency_golden_value():
    task = Task("update_gps", priority=3, aci=2, exec_time_us=10)
    assert expected_frequency(task, CycleConfig(400)) == 200.0


def test_cycle_budget_is_period_in_microseconds():
    assert CycleConfig(400).budget_us == 2500.0


def test_task_due_every_cycle_measures_f_m():
    task = Task("fast", 0, 1, 100)
    trace = run_horizon(_machine(), NoProtection(), [task], CycleConfig(400), 1000)
    assert measured_frequency(trace, task) == 400.0


def test_task_with_aci_two_measures_half_f_m():
    task = Task("slow", 0, 2, 100)
    trace = run_horizon(_machine(), NoProtection(), [task], CycleConfig(400), 1000)
    assert measured_frequency(trace, "slow") == pytest.approx(200.0, abs=400 / 1000)


def test_empty_trace_measures_zero():
    trace = CycleTrace(CycleConfig(400), "none")
    assert measured_frequency(trace, "anything") == 0.0


def test_boot_makes_every_task_due():
    timer = SoftTimer()
    tasks = [Task("a", 1, 1, 1), Task("b", 0, 3, 1)]
    timer.boot(tasks)
    assert [t.name for t in due_tasks(timer, tasks)] == ["b", "a"]


def test_equal_priorities_tie_break_by_name():
    timer = SoftTimer()
    tasks = [Task("zeta", 0, 1, 1), Task("alpha", 0, 1, 1)]
    timer.boot(tasks)
    assert [t.name for t in due_tasks(timer, tasks)] == ["alpha", "zeta"]


def test_due_rule_uses_elapsed_ticks():
    task = Task("t", 0, 3, 1)
    timer = SoftTimer()
    timer.boot([task])
    assert timer.is_due(task)
    timer.advance([task])
    assert not timer.is_due(task)
    timer.advance([])
    assert not timer.is_due(task)
    timer.advance([])
    assert timer.is_due(task)


def test_first_task_that_does_not_fit_skips_the_rest():
    tasks = [Task("big", 0, 1, 2000), Task("medium", 1, 1, 600), Task("tiny", 2, 1, 10)]
    timer = SoftTimer()
    timer.boot(tasks)

    record = run_cycle(_machine(), NoProtection(), tasks, timer, CycleConfig(400))

    assert record.executed == ("big",)
    assert record.skipped == ("medium", "tiny")


def test_skipped_tasks_keep_last_run_and_stay_due():
    tasks = [Task("big", 0, 1, 2000), Task("low", 1, 1, 600)]
    timer = SoftTimer()
    timer.boot(tasks)
    run_cycle(_machine(), NoProtection(), tasks, timer, CycleConfig(400))

    assert timer.last_run["low"] == -1
    assert timer.is_due(tasks[1])


def test_soft_timer_mirrors_ticks_into_memory():
    machine = _machine()
    timer = SoftTimer(address=DATA_BASE + 0x200)
    task = Task("t", 0, 1, 10)
    run_horizon(machine, NoProtection(), [task], CycleConfig(400), 3, timer)
    assert machine.memory.read(DATA_BASE + 0x200, 4) == (3).to_bytes(4, "little")


def test_soft_timer_fault_raises(make_machine):
    machine = make_machine()
    timer = SoftTimer(address=DATA_BASE + 0x200)
    machine.mode = PrivilegeMode.UNPRIVILEGED
    with pytest.raises(MemoryFaultError):
        timer.advance([], machine)


def test_fixed_overhead_larger_than_budget_raises(factory, ardupilot):
    sim = factory.create(ardupilot, SchemeVariant.CYCLE_ORIENTED)
    with pytest.raises(BudgetUnderflowError) as exc_info:
        run_cycle(sim.machine, sim.engine, sim.tasks, sim.timer, CycleConfig(50_000))
    assert exc_info.value.details["scheme"] == "cycle_oriented"


def test_seeded_entropy_is_the_default(factory, ardupilot):
    sim = factory.create(ardupilot, SchemeVariant.CYCLE_ORIENTED)
    assert isinstance(sim.engine.allocator.rng, SeededEntropySource)


def test_os_entropy_setting_drives_cycle_placement(ardupilot):
    factory = SimulationFactory(Settings(_env_file=None, entropy_source="os"))
    sim = factory.create(ardupilot, SchemeVariant.CYCLE_ORIENTED)
    assert isinstance(sim.engine.allocator.rng, OsEntropySource)

    trace = run_horizon(sim.machine, sim.engine, sim.tasks, sim.config, 50, sim.timer)
    assert trace.horizon == 50
    assert all(record.used_us <= sim.config.budget_us for record in trace.records)
    assert len({record.stack_base for record in trace.records}) > 10


task_sets = st.lists(
    st.tuples(st.integers(0, 5), st.integers(1, 4), st.integers(1, 900)),
    min_size=1,
    max_size=8,
)


@hypothesis_settings(max_examples=50, deadline=None)
@given(specs=task_sets)
def test_budget_safety_and_priority_dominance(specs):
    tasks = [Task(f"t{i}", p, aci, float(exec_us)) for i, (p, aci, exec_us) in enumerate(specs)]
    config = CycleConfig(400)
    trace = run_horizon(_machine(), NoProtection(), tasks, config, 40)
    by_name = {t.name: t for t in tasks}

    for record in trace.records:
        assert record.used_us <= config.budget_us
        if record.skipped and record.executed:
            worst_executed = max(by_name[n].sort_key for n in record.executed)
            best_skipped = min(by_name[n].sort_key for n in record.skipped)
            assert worst_executed < best_skipped

    for task in tasks:
        assert measured_frequency(trace, task) <= expected_frequency(task, config) + config.f_m / trace.horizon


@pytest.mark.slow
@pytest.mark.parametrize("variant", list(SchemeVariant))
def test_ardupilot_cycles_stay_within_budget_and_conserve_time(factory, ardupilot, variant):
    sim = factory.create(ardupilot, variant)
    trace = run_horizon(sim.machine, sim.engine, sim.tasks, sim.config, 1000, sim.timer)

    exec_times = {t.name: t.exec_time_us for t in sim.tasks}
    for record in trace.records:
        assert record.used_us <= sim.config.budget_us
        executed = sum(exec_times[name] for name in record.executed)
        assert record.exec_us == pytest.approx(executed)
        assert record.used_us == pytest.approx(record.overhead_us + record.alloc_us + executed)
        assert record.faults == 0


def test_soft_timer_only_mutated_privileged_under_cycle_oriented(factory, ardupilot):
    sim = factory.create(ardupilot, SchemeVariant.CYCLE_ORIENTED)
    run_horizon(sim.machine, sim.engine, sim.tasks, sim.config, 200, sim.timer)
    assert len(sim.timer.mutation_modes) == 200
    assert set(sim.timer.mutation_modes) == {PrivilegeMode.PRIVILEGED}


def test_trace_csv_rows_cover_executed_and_skipped():
    tasks = [Task("big", 0, 1, 2000), Task("low", 1, 1, 600)]
    trace = run_horizon(_machine(), NoProtection(), tasks, CycleConfig(400), 2)
    rows = trace.csv_rows()
    assert {(r["cycle"], r["task"], r["status"]) for r in rows} == {
        (0, "big", "executed"),
        (0, "low", "skipped"),
        (1, "big", "executed"),
        (1, "low", "skipped"),
    }
