"""
Metric routes for small posted payloads.
"""

from fastapi import APIRouter

from ..models.responses import ERROR_RESPONSES, ChamferRequest, FrechetRequest, JsdRequest, MetricResponse
from ..services.metrics import chamfer, fit_gaussian, frechet, jsd
from ..utils.errors import DataError

router = APIRouter(prefix="/metrics", tags=["Metrics"], responses={400: ERROR_RESPONSES[400]})


def _points(rows, name: str):
    if any(len(row) != 3 for row in rows):
        raise DataError(f"{name} must hold 3-vectors")
    return rows


@router.post("/chamfer", response_model=MetricResponse)
async def chamfer_distance(request: ChamferRequest) -> MetricResponse:
    """Chamfer distance between two point sets (m^2)."""
    value = chamfer(_points(request.a, "a"), _points(request.b, "b"))
    return MetricResponse(metric="chamfer", value=value)


@router.post("/jsd", response_model=MetricResponse)
async def jensen_shannon(request: JsdRequest) -> MetricResponse:
    """Base-2 Jensen-Shannon divergence between two histograms."""
    return MetricResponse(metric="jsd", value=jsd(request.p, request.q))


@router.post("/frechet", response_model=MetricResponse)
async def frechet_distance(request: FrechetRequest) -> MetricResponse:
    """Frechet distance between Gaussian fits of two feature sets."""
    return MetricResponse(metric="frechet", value=frechet(fit_gaussian(request.a), fit_gaussian(request.b)))
