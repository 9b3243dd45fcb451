"""Service layer: request/response schemas, handlers and the HTTP app."""

from . import handlers, schemas
from .app import create_app

__all__ = ["create_app", "handlers", "schemas"]
