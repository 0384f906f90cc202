"""
FastAPI application exposing layout checks and metric evaluation.
"""

import logging

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .config.settings import settings
from .models.responses import ErrorResponse
from .routes import health, layouts, metrics
from .utils.errors import Layout4DError
from .utils.helpers import configure_logging, format_error_response

logger = logging.getLogger(__name__)


def create_app() -> FastAPI:
    """
    Create and configure FastAPI application.

    Returns:
        FastAPI: Configured application instance
    """
    configure_logging()
    app = FastAPI(
        title=settings.APP_NAME,
        description=settings.APP_DESCRIPTION,
        version=settings.APP_VERSION,
        docs_url="/docs",
        redoc_url="/redoc",
        redirect_slashes=False,
    )

    app.add_middleware(
        CORSMiddleware,
        allow_origins=settings.CORS_ORIGINS,
        allow_credentials=settings.CORS_CREDENTIALS,
        allow_methods=settings.CORS_METHODS,
        allow_headers=settings.CORS_HEADERS,
    )

    app.include_router(health.router)
    app.include_router(layouts.router)
    app.include_router(metrics.router)

    @app.exception_handler(Layout4DError)
    async def library_error_handler(request: Request, exc: Layout4DError):
        """Map library errors onto their HTTP status with the standard envelope."""
        logger.info("%s %s rejected: %s", request.method, request.url.path, exc)
        body = ErrorResponse(**format_error_response(exc))
        return JSONResponse(status_code=exc.http_status, content=body.model_dump(exclude_none=True))

    return app


app = create_app()
