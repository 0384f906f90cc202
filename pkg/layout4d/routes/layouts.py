"""
Layout routes: validation, scene-graph derivation and editing.
"""

from fastapi import APIRouter

from ..models.documents import LayoutDocument
from ..models.responses import (
    ERROR_RESPONSES,
    EditRequest,
    EditResponse,
    GraphResponse,
    LayoutRequest,
    ValidateResponse,
)
from ..services.formats import layout_from_document, layout_to_document, parse_document
from ..services.layout import apply_edit, derive_graph, validate_layout

router = APIRouter(prefix="/layouts", tags=["Layouts"], responses=ERROR_RESPONSES)


def _layout(request: LayoutRequest):
    return layout_from_document(parse_document(LayoutDocument, request.layout, "layout"))


@router.post("/validate", response_model=ValidateResponse)
async def validate(request: LayoutRequest) -> ValidateResponse:
    """
    Run every validity gate on a layout.

    Args:
        request: Layout document and rules

    Returns:
        ValidateResponse: Violations found, empty when the layout is valid
    """
    report = validate_layout(_layout(request), request.rules)
    return ValidateResponse(ok=report.ok, report=report)


@router.post("/graph", response_model=GraphResponse)
async def graph(request: LayoutRequest) -> GraphResponse:
    """Derive the ego-centric scene graph from frame-0 geometry."""
    return GraphResponse(graph=derive_graph(_layout(request)))


@router.post("/edit", response_model=EditResponse)
async def edit(request: EditRequest) -> EditResponse:
    """
    Apply an edit; invalid results are rejected with 422 and their violations.

    Args:
        request: Layout, operation name and its arguments

    Returns:
        EditResponse: The edited layout document
    """
    edited = apply_edit(_layout(request), request.op, request.args, request.rules)
    return EditResponse(layout=layout_to_document(edited))
