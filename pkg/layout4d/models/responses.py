"""
HTTP request and response models.
"""

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from .layout import SceneGraph, ValidityReport, ValidityRules


class HealthResponse(BaseModel):
    """Health check response model."""
    status: str = Field(..., description="Service health status")
    message: str = Field(..., description="Health status message")
    threads: int = Field(..., description="Worker threads for dataset evaluation")
    warnings: List[str] = Field(default_factory=list, description="Configuration warnings")
    service_version: str = Field(..., description="Service version")


class ErrorResponse(BaseModel):
    """Error response model."""
    error: str = Field(..., description="Error type")
    message: str = Field(..., description="Error message")
    violations: Optional[List[Any]] = Field(None, description="Validity violations, when rejected")
    index: Optional[int] = Field(None, description="Offending item index, when known")
    pointer: Optional[str] = Field(None, description="JSON pointer of the offending field, for schema errors")
    timestamp: str = Field(..., description="UTC time of the failure")
    request_id: str = Field(..., description="Request id for log correlation")


ERROR_RESPONSES = {
    400: {"model": ErrorResponse, "description": "Malformed document or data"},
    422: {"model": ErrorResponse, "description": "Rejected by validity checks"},
}


class LayoutRequest(BaseModel):
    """A layout document plus optional rule overrides."""
    layout: Dict[str, Any] = Field(..., description="Layout JSON document")
    rules: ValidityRules = Field(default_factory=ValidityRules)


class EditRequest(LayoutRequest):
    op: Literal["insert", "delete", "translate", "retraject"] = Field(..., description="Edit operation")
    args: Dict[str, Any] = Field(default_factory=dict, description="Operation arguments")


class ValidateResponse(BaseModel):
    ok: bool
    report: ValidityReport


class GraphResponse(BaseModel):
    graph: SceneGraph


class EditResponse(BaseModel):
    layout: Dict[str, Any] = Field(..., description="Edited layout document")


class ChamferRequest(BaseModel):
    a: List[List[float]] = Field(..., description="N x 3 points")
    b: List[List[float]] = Field(..., description="M x 3 points")


class JsdRequest(BaseModel):
    p: List[float] = Field(..., description="Histogram counts")
    q: List[float] = Field(..., description="Histogram counts, same length as p")


class FrechetRequest(BaseModel):
    a: List[List[float]] = Field(..., description="Feature vectors of the first set")
    b: List[List[float]] = Field(..., description="Feature vectors of the second set")


class MetricResponse(BaseModel):
    metric: str = Field(..., description="Metric name")
    value: float = Field(..., description="Metric value")
