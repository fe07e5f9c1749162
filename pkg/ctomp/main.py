# ctomp/main.py
from contextlib import asynccontextmanager
from datetime import datetime, timezone

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .api.v1 import api_router
from .config import settings
from .services.scenario_registry import ScenarioRegistry
from .utils.exceptions import CToMPError, ScenarioError
from .utils.logging_manager import LoggingManager

LoggingManager.configure_logging(level=settings.log_level, debug=settings.debug)

logger = LoggingManager.get_logger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan events"""
    logger.info("Starting CToMP simulator API")

    ScenarioRegistry.discover_scenarios()
    logger.success(
        "Scenario registry initialized", scenarios=ScenarioRegistry.get_available_names()
    )

    yield

    logger.info("Shutting down CToMP simulator API")


def create_app() -> FastAPI:
    """Create and configure FastAPI application"""

    app = FastAPI(
        title=settings.app_name,
        version=settings.version,
        description="Cycle-oriented memory protection experiments over HTTP",
        lifespan=lifespan,
        docs_url="/docs",
        redoc_url="/redoc",
    )

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    app.include_router(api_router, prefix="/api/v1")

    @app.exception_handler(ScenarioError)
    async def scenario_error_handler(request, exc: ScenarioError):
        logger.error("Scenario rejected", error=exc.message, details=exc.details)
        return JSONResponse(
            status_code=400,
            content={"detail": exc.message, "type": "scenario_error", "details": exc.details},
        )

    @app.exception_handler(CToMPError)
    async def simulation_error_handler(request, exc: CToMPError):
        logger.error(
            "Simulation error",
            error=exc.message,
            error_type=type(exc).__name__,
            details=exc.details,
        )
        return JSONResponse(
            status_code=422,
            content={
                "detail": exc.message,
                "type": "simulation_error",
                "error_type": type(exc).__name__,
            },
        )

    @app.exception_handler(ValueError)
    async def value_error_handler(request, exc: ValueError):
        logger.error("Validation error", error=str(exc))
        return JSONResponse(
            status_code=400, content={"detail": str(exc), "type": "validation_error"}
        )

    @app.exception_handler(Exception)
    async def general_exception_handler(request, exc: Exception):
        logger.error("Unexpected error", error=str(exc), error_type=type(exc).__name__)
        return JSONResponse(
            status_code=500,
            content={"detail": "Internal server error", "type": "internal_error"},
        )

    @app.get("/")
    async def read_root():
        """Root endpoint with API information"""
        return {
            "message": "CToMP simulator API",
            "version": settings.version,
            "docs_url": "/docs",
            "health_check": "/health",
            "scenarios": ScenarioRegistry.get_available_names(),
        }

    @app.get("/health")
    async def health_check():
        """Health check endpoint"""
        try:
            from .core.storage.factory import StorageFactory

            StorageFactory.create_storage()
            storage_status = "healthy"
        except Exception as e:
            storage_status = f"error: {str(e)}"

        return {
            "status": "healthy",
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "version": settings.version,
            "storage_backend": settings.storage_backend,
            "storage_status": storage_status,
        }

    return app


app = create_app()

if __name__ == "__main__":
    import uvicorn

    uvicorn.run(
        "ctomp.main:app",
        host="0.0.0.0",
        port=8000,
        reload=settings.debug,
        log_level=settings.log_level.lower(),
    )
