"""Shared helpers for the MTD MCP server."""

from .errors import (
    InvalidInputError,
    InvariantViolation,
    MtdError,
    ParseError,
    PlanningError,
    ScenarioError,
    UndefinedCorrelationError,
    format_error,
    validate_model,
)

__all__ = [
    "InvalidInputError",
    "InvariantViolation",
    "MtdError",
    "ParseError",
    "PlanningError",
    "ScenarioError",
    "UndefinedCorrelationError",
    "format_error",
    "validate_model",
]
