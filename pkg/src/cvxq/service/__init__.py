"""HTTP service wrapping the training and audit operations."""

from . import ops, schemas

__all__ = ["ops", "schemas"]
