"""
Application settings and configuration.
"""

import math
import os
from typing import Optional

from dotenv import load_dotenv

from .. import __version__

# Load environment variables from .env file
load_dotenv()


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    return int(value) if value else default


class Settings:
    """Application settings class."""

    # Package Information
    APP_NAME: str = "Layout4D"
    APP_DESCRIPTION: str = "4D LiDAR layouts, sequence warping and generation metrics"
    APP_VERSION: str = __version__
    SCHEMA_VERSION: str = "1.0"

    # Server Configuration
    HOST: str = os.getenv("LAYOUT4D_HOST", "0.0.0.0")
    PORT: int = _env_int("LAYOUT4D_PORT", 8000)

    # CORS Configuration
    CORS_ORIGINS: list = ["*"]
    CORS_CREDENTIALS: bool = True
    CORS_METHODS: list = ["*"]
    CORS_HEADERS: list = ["*"]

    # Worker pool
    THREADS: int = _env_int("LAYOUT4D_THREADS", os.cpu_count() or 1)

    # Logging
    LOG_LEVEL: str = os.getenv("LAYOUT4D_LOG_LEVEL", "INFO")

    # Sensor defaults (32-beam spinning LiDAR)
    SENSOR_ROWS: int = 32
    SENSOR_COLS: int = 1024
    SENSOR_ELEV_MAX: float = math.radians(10.67)
    SENSOR_ELEV_MIN: float = math.radians(-30.67)
    SENSOR_RANGE_MIN: float = 0.5
    SENSOR_RANGE_MAX: float = 120.0

    # BEV grid
    BEV_EXTENT: float = 50.0
    BEV_BINS: int = 500

    # Layout defaults
    LAYOUT_HORIZON: int = 8
    LAYOUT_DT: float = 0.5
    SHAPE_POINTS: int = 512
    GROUND_Z: float = -1.8

    # Registration
    ICP_VOXEL_SIZE: float = float(os.getenv("LAYOUT4D_VOXEL_SIZE", "0.2"))

    @property
    def threads(self) -> int:
        """Worker count, never below one."""
        return max(1, self.THREADS)

    def validate_configuration(self) -> dict:
        """Validate current configuration and return status."""
        status = {
            "threads": self.threads,
            "log_level": self.LOG_LEVEL,
            "warnings": [],
        }

        if self.THREADS < 1:
            status["warnings"].append("LAYOUT4D_THREADS below 1, using a single worker")

        if self.LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            status["warnings"].append(f"Unknown log level {self.LOG_LEVEL!r}")

        if self.ICP_VOXEL_SIZE < 0:
            status["warnings"].append("Negative LAYOUT4D_VOXEL_SIZE, downsampling disabled")

        return status

    def override(self, threads: Optional[int] = None, log_level: Optional[str] = None) -> None:
        """Apply command-line overrides on top of the environment."""
        if threads is not None:
            self.THREADS = threads
        if log_level is not None:
            self.LOG_LEVEL = log_level


# Global settings instance
settings = Settings()
