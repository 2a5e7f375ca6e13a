"""Configuration management for the MTD MCP server."""

import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

from .risk_engine import OrrmAggregation, ShrinkageConvention

logger = logging.getLogger(__name__)

load_dotenv()


class Config(BaseModel):
    """Configuration model."""

    shrinkage_threshold: int = Field(default=5, ge=0)
    shrinkage_convention: ShrinkageConvention = ShrinkageConvention.APP_MEAN
    orrm_aggregation: OrrmAggregation = OrrmAggregation.SUM
    weighted_correlation: bool = False
    score_table: Optional[Path] = None
    log_level: str = "INFO"


def _env_enum(name: str, enum_cls, default):
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return enum_cls(raw.strip().lower())
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise ValueError(f"{name} must be one of: {allowed}") from None


def _env_flag(name: str) -> bool:
    raw = os.getenv(name, "0").strip().lower()
    if raw in ("1", "true", "yes", "on"):
        return True
    if raw in ("", "0", "false", "no", "off"):
        return False
    raise ValueError(f"{name} must be a boolean (1/0, true/false, yes/no, on/off)")


def get_config() -> Config:
    """
    Get configuration from environment variables.

    Returns:
        Configuration object

    Raises:
        ValueError: If an environment variable holds an invalid value
    """
    threshold = os.getenv("MTD_SHRINKAGE_THRESHOLD", "5")
    if not threshold.strip().isdigit():
        raise ValueError("MTD_SHRINKAGE_THRESHOLD must be a non-negative integer")

    score_table = os.getenv("MTD_SCORE_TABLE")
    if score_table and not Path(score_table).exists():
        raise ValueError(f"MTD_SCORE_TABLE points to a missing file: {score_table}")

    log_level = os.getenv("MTD_LOG_LEVEL", "INFO").upper()
    if log_level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        raise ValueError("MTD_LOG_LEVEL must be one of DEBUG, INFO, WARNING, ERROR")

    return Config(
        shrinkage_threshold=int(threshold),
        shrinkage_convention=_env_enum(
            "MTD_SHRINKAGE_CONVENTION", ShrinkageConvention, ShrinkageConvention.APP_MEAN
        ),
        orrm_aggregation=_env_enum("MTD_ORRM_AGGREGATION", OrrmAggregation, OrrmAggregation.SUM),
        weighted_correlation=_env_flag("MTD_WEIGHTED_CORRELATION"),
        score_table=Path(score_table) if score_table else None,
        log_level=log_level,
    )
