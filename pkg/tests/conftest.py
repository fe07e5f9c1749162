import pytest

from ctomp.config import Settings
from ctomp.core.allocator import MemoryPool, PoolAllocator, RegionTable, SeededEntropySource
from ctomp.core.memory_model import Machine, MemoryMap, Segment, Symbol
from ctomp.core.timing import TimeModel
from ctomp.models.base import SegmentKind
from ctomp.services.experiment_service import ExperimentService
from ctomp.services.scenario_registry import ScenarioRegistry
from ctomp.services.simulation_factory import SimulationFactory

CODE_BASE = 0x08000000
DATA_BASE = 0x20000000
POOL_BASE = 0x20010000
PERIPH_BASE = 0x40000000
PPB_BASE = 0xE0000000


@pytest.fixture
def settings() -> Settings:
    return Settings(_env_file=None, report_dir="reports")


@pytest.fixture
def time_model() -> TimeModel:
    return TimeModel()


@pytest.fixture
def memory_map() -> MemoryMap:
    """Small five-segment layout with a default-size pool"""
    segments = [
        Segment(SegmentKind.CODE, CODE_BASE, 0x10000, "code"),
        Segment(SegmentKind.DATA, DATA_BASE, 0x4000, "data"),
        Segment(SegmentKind.POOL, POOL_BASE, 5632, "pool"),
        Segment(SegmentKind.PERIPHERAL, PERIPH_BASE, 0x1000, "peripheral"),
        Segment(SegmentKind.PRIVATE_PERIPHERAL, PPB_BASE, 0x10000, "private_peripheral"),
    ]
    symbols = [
        Symbol("kernel_text", CODE_BASE, 0x1000),
        Symbol("pid_params", DATA_BASE + 0x100, 64),
        Symbol("soft_timer", DATA_BASE + 0x200, 64),
        Symbol("main_stack", DATA_BASE + 0x800, 0x800),
        Symbol("task_stack", DATA_BASE + 0x2000, 1024),
        Symbol("rc_channels", PERIPH_BASE + 0x40, 32),
        Symbol("syst_rvr", PPB_BASE + 0xE014, 4),
    ]
    return MemoryMap(segments, symbols=symbols)


@pytest.fixture
def make_machine(memory_map, time_model):
    def _make(**kwargs) -> Machine:
        kwargs.setdefault("main_stack", DATA_BASE + 0x1000 - 8)
        return Machine(memory_map, time_model, **kwargs)

    return _make


@pytest.fixture
def entropy() -> SeededEntropySource:
    return SeededEntropySource(1234)


@pytest.fixture
def pool() -> MemoryPool:
    return MemoryPool(POOL_BASE)


@pytest.fixture
def allocator(pool, entropy) -> PoolAllocator:
    return PoolAllocator(pool, entropy, RegionTable())


@pytest.fixture
def ardupilot():
    return ScenarioRegistry.get_scenario("ardupilot_like")


@pytest.fixture
def crazyflie():
    return ScenarioRegistry.get_scenario("crazyflie_like")


@pytest.fixture
def factory(settings) -> SimulationFactory:
    return SimulationFactory(settings)


@pytest.fixture
def service(settings) -> ExperimentService:
    return ExperimentService(settings)
