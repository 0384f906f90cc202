"""
Health check routes.
"""

from fastapi import APIRouter

from ..config.settings import settings
from ..models.responses import HealthResponse

router = APIRouter(tags=["Health"])


@router.get("/health", response_model=HealthResponse)
async def health_check():
    """
    Health check endpoint to verify service status.

    Returns:
        HealthResponse: Current service health status
    """
    config_status = settings.validate_configuration()

    return HealthResponse(
        status="healthy",
        message=f"{settings.APP_NAME} is operational",
        threads=config_status["threads"],
        warnings=config_status["warnings"],
        service_version=settings.APP_VERSION,
    )
