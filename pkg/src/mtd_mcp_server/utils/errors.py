import logging
from typing import Any, Mapping, Type, TypeVar

from pydantic import BaseModel, ValidationError

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)

# pydantic error types that mean "value has the right shape but is out of range"
_RANGE_ERROR_PREFIXES = ("greater_than", "less_than", "value_error", "too_short", "too_long")


class MtdError(Exception):
    """Base class for all simulator and analysis errors"""

    pass


class InvalidInputError(MtdError):
    """Input violates a documented precondition or invariant"""

    pass


class ParseError(InvalidInputError):
    """Document does not conform to its schema"""

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


class UndefinedCorrelationError(InvalidInputError):
    """Pearson coefficient is undefined for constant vectors"""

    pass


class PlanningError(InvalidInputError):
    """Diversification plan cannot be built"""

    pass


class ScenarioError(InvalidInputError):
    """Scenario file or scenario-level reference is invalid"""

    pass


class InvariantViolation(MtdError):
    """Internal invariant broken; indicates a bug, not a scenario condition"""

    pass


def _location(error: Mapping[str, Any]) -> str:
    return ".".join(str(part) for part in error.get("loc", ())) or "<root>"


def validate_model(model_cls: Type[ModelT], data: Any) -> ModelT:
    """Validate ``data`` against ``model_cls`` and translate pydantic errors.

    Structural problems (missing field, wrong type) become :class:`ParseError`
    naming the offending field; range and semantic problems become
    :class:`InvalidInputError`.
    """
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = _location(first)
        message = f"{model_cls.__name__}.{field}: {first.get('msg', 'invalid value')}"
        if str(first.get("type", "")).startswith(_RANGE_ERROR_PREFIXES):
            raise InvalidInputError(message) from e
        raise ParseError(message, field=field) from e


def format_error(e: BaseException) -> str:
    """format errors"""
    if isinstance(e, ParseError):
        return f"Parse error in field '{e.field}': {e}"
    if isinstance(e, InvariantViolation):
        return f"Internal invariant failure: {e}"
    if isinstance(e, MtdError):
        notes = "; ".join(getattr(e, "__notes__", []))
        return f"{type(e).__name__}: {e}" + (f" ({notes})" if notes else "")
    return f"Execution failed: {type(e).__name__}: {e}"
