from typing import Any, Literal

from fastapi import APIRouter, Depends
from fastapi.concurrency import run_in_threadpool

from ....models.requests import (
    AllocBenchRequest,
    AttackMatrixRequest,
    CompareRequest,
    RunRequest,
)
from ....models.responses import Report
from ....models.scenario import Scenario
from ....services.experiment_service import ExperimentService
from ....services.scenario_registry import ScenarioRegistry
from ....utils.logging_manager import LoggingManager

logger = LoggingManager.get_logger(__name__)


router = APIRouter()

SCHEMAS = {"report": Report, "scenario": Scenario}


def get_experiment_service() -> ExperimentService:
    """Dependency to get experiment service instance"""
    return ExperimentService()


@router.get("/scenarios")
async def list_scenarios() -> dict[str, Any]:
    """Bundled scenarios with their task sets"""
    scenarios = ScenarioRegistry.get_all_scenarios()
    return {"scenarios": scenarios, "total": len(scenarios)}


@router.get("/schema")
async def document_schema(
    document: Literal["report", "scenario"] = "report",
) -> dict[str, Any]:
    """JSON schema of the report document, or of the scenario file format"""
    return SCHEMAS[document].model_json_schema()


@router.post("/run", response_model=Report)
async def run_scenario(
    request: RunRequest,
    service: ExperimentService = Depends(get_experiment_service),
) -> Report:
    """Simulate one scheme over the horizon and report task frequencies and overhead"""
    logger.info("Processing run request", scenario=request.scenario)
    scenario = ScenarioRegistry.get_scenario(request.scenario)
    return await run_in_threadpool(
        service.cmd_run, scenario, request.scheme, request.seed, request.horizon
    )


@router.post("/compare", response_model=Report)
async def compare_schemes(
    request: CompareRequest,
    service: ExperimentService = Depends(get_experiment_service),
) -> Report:
    """Simulate several schemes with the same seed, side by side"""
    logger.info("Processing compare request", scenario=request.scenario)
    scenario = ScenarioRegistry.get_scenario(request.scenario)
    return await run_in_threadpool(
        service.cmd_compare, scenario, request.schemes, request.seed, request.horizon
    )


@router.post("/attack-matrix", response_model=Report)
async def attack_matrix(
    request: AttackMatrixRequest,
    service: ExperimentService = Depends(get_experiment_service),
) -> Report:
    """Adjudicate every scripted attack under every requested scheme"""
    logger.info("Processing attack matrix request", scenario=request.scenario)
    scenario = ScenarioRegistry.get_scenario(request.scenario)
    return await run_in_threadpool(
        service.cmd_attack_matrix, scenario, request.schemes, request.seed, request.trials
    )


@router.post("/alloc-bench", response_model=Report)
async def alloc_bench(
    request: AllocBenchRequest,
    service: ExperimentService = Depends(get_experiment_service),
) -> Report:
    """Compare ascending and descending allocation order on one request set"""
    return await run_in_threadpool(
        service.cmd_alloc_bench,
        pool_size=request.pool_size,
        sizes=request.sizes,
        trials=request.trials,
        seed=request.seed,
        alignment=request.alignment,
        max_allocate_num=request.max_allocate_num,
        retry_budget=request.retry_budget,
    )
