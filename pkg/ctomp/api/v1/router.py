from fastapi import APIRouter

from .modules import experiments

api_router = APIRouter()

api_router.include_router(
    experiments.router, prefix="/experiments", tags=["experiments"]
)


@api_router.get("/modules")
async def get_available_modules():
    """Get information about available modules"""
    return {"available_modules": ["experiments"], "total_modules": 1}
