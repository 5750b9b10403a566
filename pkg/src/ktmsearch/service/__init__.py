"""Service layer: FastAPI app, request/response schemas, and background jobs."""
from .app import create_app
from .jobs import JobManager

__all__ = ["create_app", "JobManager"]
