# ctomp/services/scenario_registry.py
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Union

from pydantic import ValidationError

from ..models.scenario import Scenario
from ..utils.exceptions import ScenarioParseError, ScenarioValidationError
from ..utils.logging_manager import LoggingManager

logger = LoggingManager.get_logger(__name__)

SCENARIO_DIR = Path(__file__).parent.parent / "scenarios"


def _location(exc: tomllib.TOMLDecodeError) -> tuple[int | None, int | None]:
    line, column = getattr(exc, "lineno", None), getattr(exc, "colno", None)
    if line is None:
        # Older interpreters only carry the position in the message text.
        match = re.search(r"line (\d+), column (\d+)", str(exc))
        if match:
            line, column = int(match.group(1)), int(match.group(2))
    return line, column


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate scenario TOML text"""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        line, column = _location(e)
        raise ScenarioParseError(source, str(e), line, column) from e

    try:
        return Scenario.model_validate(raw)
    except ValidationError as e:
        error = e.errors()[0]
        field = ".".join(str(part) for part in error["loc"]) or "scenario"
        reason = error["msg"].removeprefix("Value error, ")
        raise ScenarioValidationError(field, reason, error.get("input")) from e


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Load a scenario from a file path, or by bundled scenario name"""
    candidate = Path(path)
    if not candidate.suffix and not candidate.exists():
        return ScenarioRegistry.get_scenario(str(path))
    try:
        text = candidate.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioParseError(str(candidate), f"cannot read file: {e.strerror}") from e
    scenario = parse_scenario(text, str(candidate))
    logger.debug("Scenario loaded", scenario=scenario.name, path=str(candidate))
    return scenario


class ScenarioRegistry:
    """Auto-discovery registry for bundled scenarios"""

    _scenarios: dict[str, Scenario] = {}
    _discovered = False

    @classmethod
    def discover_scenarios(cls) -> None:
        """Load every TOML scenario shipped with the package"""
        if cls._discovered:
            return

        logger.info("Discovering bundled scenarios")
        for path in sorted(SCENARIO_DIR.glob("*.toml")):
            try:
                scenario = parse_scenario(path.read_text(encoding="utf-8"), str(path))
            except (ScenarioParseError, ScenarioValidationError) as e:
                logger.warning("Skipping invalid bundled scenario", path=str(path), error=e.message)
                continue
            cls._scenarios[path.stem] = scenario
            logger.debug("Discovered scenario", name=path.stem, tasks=len(scenario.tasks))

        cls._discovered = True
        logger.info("Scenario discovery complete", found=len(cls._scenarios))

    @classmethod
    def get_scenario(cls, name: str) -> Scenario:
        cls.discover_scenarios()

        if name not in cls._scenarios:
            available = sorted(cls._scenarios)
            raise ScenarioValidationError(
                "scenario", f"unknown scenario; available: {available}", name
            )
        return cls._scenarios[name].model_copy(deep=True)

    @classmethod
    def get_all_scenarios(cls) -> dict[str, dict[str, Any]]:
        cls.discover_scenarios()

        result = {}
        for name, scenario in cls._scenarios.items():
            result[name] = {
                "name": name,
                "description": scenario.scenario.description,
                "f_m": scenario.cycle.f_m,
                "tasks": [t.name for t in scenario.tasks],
                "default_scheme": scenario.scheme.default.value,
                "attacks": len(scenario.attacks),
            }
        return result

    @classmethod
    def get_available_names(cls) -> list[str]:
        cls.discover_scenarios()
        return sorted(cls._scenarios)

