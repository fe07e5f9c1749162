import pytest

from ctomp.models.base import SchemeVariant
from ctomp.services.scenario_registry import (
    SCENARIO_DIR,
    ScenarioRegistry,
    load_scenario,
    parse_scenario,
)
from ctomp.utils.exceptions import ScenarioParseError, ScenarioValidationError

MINIMAL = """
[scenario]
name = "mini"

[cycle]
f_m = 100

[memory]
main_stack = "main_stack"

[[memory.segments]]
name = "data"
kind = "data"
base = 0x20000000
size = 0x1000

[memory.symbols]
main_stack = { address = 0x20000800, size = 0x800 }
flag = { address = 0x20000100, size = 4 }

[[tasks]]
name = "only"
priority = 0
aci = 1
exec_time_us = 10
touches = ["flag:rw"]
"""


def test_bundled_ardupilot_scenario(ardupilot):
    assert ardupilot.cycle.f_m == 400
    assert [t.name for t in ardupilot.tasks][:2] == ["fast_loop", "rc_loop"]
    assert len(ardupilot.tasks) == 8
    assert len(ardupilot.scheme.cycle_oriented.regions) == 6
    assert ardupilot.vulnerable_task is not None
    assert len(ardupilot.attacks) == 8


def test_bundled_names_are_discovered():
    assert {"ardupilot_like", "crazyflie_like"} <= set(ScenarioRegistry.get_available_names())
    summary = ScenarioRegistry.get_all_scenarios()["crazyflie_like"]
    assert summary["f_m"] == 1000
    assert summary["default_scheme"] == "cycle_oriented"


def test_registry_hands_out_independent_copies():
    first = ScenarioRegistry.get_scenario("ardupilot_like")
    first.tasks.clear()
    assert ScenarioRegistry.get_scenario("ardupilot_like").tasks


def test_unknown_scenario_name():
    with pytest.raises(ScenarioValidationError) as exc_info:
        ScenarioRegistry.get_scenario("no_such_vehicle")
    assert exc_info.value.details["value"] == "no_such_vehicle"


def test_minimal_scenario_parses_with_defaults():
    scenario = parse_scenario(MINIMAL)
    assert scenario.name == "mini"
    assert scenario.scenario.seed == 20221
    assert scenario.scheme.default == SchemeVariant.CYCLE_ORIENTED
    assert scenario.tasks[0].parsed_touches()[0][0] == "flag"


def test_empty_task_list_is_rejected():
    text = "tasks = []\n" + MINIMAL.split("[[tasks]]")[0]
    with pytest.raises(ScenarioValidationError) as exc_info:
        parse_scenario(text)
    assert exc_info.value.details["field"] == "tasks"


def test_unknown_symbol_is_rejected():
    text = MINIMAL.replace('"flag:rw"', '"missing:rw"')
    with pytest.raises(ScenarioValidationError, match="missing"):
        parse_scenario(text)


def test_malformed_touch_is_rejected():
    with pytest.raises(ScenarioValidationError):
        parse_scenario(MINIMAL.replace('"flag:rw"', '"flag"'))


def test_symbol_outside_segments_is_rejected():
    text = MINIMAL.replace("0x20000100, size = 4", "0x30000000, size = 4")
    with pytest.raises(ScenarioValidationError, match="flag"):
        parse_scenario(text)


def test_toml_syntax_error_reports_line():
    text = '[scenario]\nname = "broken"\nseed = = 3\n'
    with pytest.raises(ScenarioParseError) as exc_info:
        parse_scenario(text, "broken.toml")
    assert exc_info.value.details["line"] == 3
    assert exc_info.value.details["path"] == "broken.toml"


def test_load_scenario_from_file(tmp_path):
    path = tmp_path / "mini.toml"
    path.write_text(MINIMAL, encoding="utf-8")
    assert load_scenario(path).name == "mini"


def test_load_scenario_by_bundled_name():
    assert load_scenario("crazyflie_like").cycle.f_m == 1000


def test_load_missing_file_is_a_parse_error(tmp_path):
    with pytest.raises(ScenarioParseError):
        load_scenario(tmp_path / "absent.toml")


def _bundled_text(name: str) -> str:
    return (SCENARIO_DIR / f"{name}.toml").read_text(encoding="utf-8")


def test_unaligned_pool_segment_is_rejected_at_load():
    text = _bundled_text("ardupilot_like").replace("base = 0x20010000", "base = 0x2000FF03")
    with pytest.raises(ScenarioValidationError, match="aligned") as exc_info:
        parse_scenario(text)
    assert exc_info.value.details["field"] == "memory"


def test_overlapping_segments_are_rejected_at_load():
    text = _bundled_text("ardupilot_like").replace("base = 0x20010000", "base = 0x2000F000")
    with pytest.raises(ScenarioValidationError, match="overlap") as exc_info:
        parse_scenario(text)
    assert exc_info.value.details["field"] == "memory"


def test_duplicate_segment_names_are_rejected_at_load():
    text = _bundled_text("ardupilot_like").replace('name = "peripheral"', 'name = "data"')
    with pytest.raises(ScenarioValidationError, match="Duplicate"):
        parse_scenario(text)


def test_cycle_oriented_scheme_needs_a_pool_segment():
    text = _bundled_text("ardupilot_like").replace('kind = "pool"', 'kind = "data"')
    with pytest.raises(ScenarioValidationError, match="exactly one pool segment"):
        parse_scenario(text)


def test_pool_size_override_must_match_the_pool_segment():
    text = _bundled_text("crazyflie_like").replace("pool_size = 4096", "pool_size = 2048")
    with pytest.raises(ScenarioValidationError, match="pool_size 2048"):
        parse_scenario(text)
