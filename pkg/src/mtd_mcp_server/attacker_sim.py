"""Attacker model: node compromises, dwell time and scripted attack replay."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .cluster_sim import ClusterState, NodePhase, to_ms, to_s
from .utils.errors import InvalidInputError, ScenarioError, validate_model
from .vuln_model import Layer, ScanReport

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400

# Median days an intruder stayed undetected on a victim system, by report year.
# no measurement for 2011
DWELL_MEDIAN_DAYS: Dict[int, int] = {
    2010: 416,
    2012: 243,
    2013: 229,
    2014: 205,
    2015: 146,
    2016: 99,
}
DEFAULT_BASELINE_DETECTION_S = DWELL_MEDIAN_DAYS[2016] * SECONDS_PER_DAY


def baseline_detection_for(year: int) -> int:
    """Baseline detection delay in seconds for a report year."""
    if year not in DWELL_MEDIAN_DAYS:
        raise InvalidInputError(
            f"no dwell-time median for {year}; known years: {sorted(DWELL_MEDIAN_DAYS)}"
        )
    return DWELL_MEDIAN_DAYS[year] * SECONDS_PER_DAY


class ScriptKind(str, Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


class ArrivalProcess(str, Enum):
    POISSON = "poisson"
    SCHEDULED = "scheduled"


class ScriptRequirement(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    service: str
    cwe_id: int = Field(alias="cwe", gt=0)
    layer: Layer


class AttackerScript(BaseModel):
    """An automated attack that needs every listed weakness to be present."""

    model_config = ConfigDict(frozen=True)

    id: str
    requirements: Tuple[ScriptRequirement, ...] = Field(min_length=1)
    kind: ScriptKind = ScriptKind.HORIZONTAL

    @model_validator(mode="after")
    def _vertical_spans_layers(self) -> "AttackerScript":
        if self.kind == ScriptKind.VERTICAL:
            layers = {r.layer for r in self.requirements}
            if layers != {Layer.APPLICATION, Layer.IMAGE}:
                raise ValueError(f"vertical script {self.id} must reference both layers")
        return self

    @property
    def services(self) -> List[str]:
        return sorted({r.service for r in self.requirements})


def parse_attacker_script(data: Mapping[str, Any]) -> AttackerScript:
    return validate_model(AttackerScript, data)


class ScheduledInjection(BaseModel):
    model_config = ConfigDict(frozen=True)

    at_s: float = Field(ge=0)
    node_id: Optional[str] = None


class AttackerModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    interarrival_s: float = Field(default=3600.0, gt=0)
    baseline_detection_s: float = Field(default=DEFAULT_BASELINE_DETECTION_S, gt=0)
    baseline_year: Optional[int] = None
    arrival: ArrivalProcess = ArrivalProcess.POISSON
    injections: Tuple[ScheduledInjection, ...] = ()
    scripts: Tuple[AttackerScript, ...] = ()
    replay_period_s: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _resolve_baseline_year(self) -> "AttackerModel":
        if self.baseline_year is not None:
            if self.baseline_year not in DWELL_MEDIAN_DAYS:
                raise ValueError(f"no dwell-time median for {self.baseline_year}")
            object.__setattr__(
                self, "baseline_detection_s", float(baseline_detection_for(self.baseline_year))
            )
        return self


class CompromiseRecord(BaseModel):
    """Attacker presence on one node; ``end_ms`` stays None while the foothold lasts."""

    model_config = ConfigDict(frozen=True)

    node_id: str
    start_ms: int = Field(ge=0)
    end_ms: Optional[int] = None
    cause: str = "scenario"

    @model_validator(mode="after")
    def _end_after_start(self) -> "CompromiseRecord":
        if self.end_ms is not None and self.end_ms < self.start_ms:
            raise ValueError("compromise record ends before it starts")
        return self

    @property
    def is_open(self) -> bool:
        return self.end_ms is None

    @property
    def start_s(self) -> float:
        return to_s(self.start_ms)

    @property
    def end_s(self) -> Optional[float]:
        return None if self.end_ms is None else to_s(self.end_ms)

    @property
    def dwell_s(self) -> Optional[float]:
        return None if self.end_ms is None else to_s(self.end_ms - self.start_ms)


@dataclass
class AttackerState:
    open: Dict[str, CompromiseRecord] = field(default_factory=dict)
    closed: List[CompromiseRecord] = field(default_factory=list)

    def records(self) -> List[CompromiseRecord]:
        return [*self.closed, *self.open.values()]


class DwellStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    median_s: float
    mean_s: float
    max_s: float
    count: int


class ReplayResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    script_id: str
    success: bool
    matched: Tuple[ScriptRequirement, ...]
    missing: Tuple[ScriptRequirement, ...]


def replay_script(
    script: AttackerScript,
    reports: Union[Sequence[ScanReport], Mapping[str, ScanReport]],
) -> ReplayResult:
    """Replay a script against the current variant of every service.

    Succeeds iff each (service, cwe, layer) requirement has at least one finding.

    Raises:
        ScenarioError: the script names a service without a report
    """
    if isinstance(reports, Mapping):
        by_service = dict(reports)
    else:
        by_service = {r.service: r for r in reports}
    matched, missing = [], []
    for requirement in script.requirements:
        report = by_service.get(requirement.service)
        if report is None:
            raise ScenarioError(
                f"script {script.id} references unknown service {requirement.service}"
            )
        if report.count_of(requirement.cwe_id, requirement.layer) >= 1:
            matched.append(requirement)
        else:
            missing.append(requirement)
    return ReplayResult(
        script_id=script.id,
        success=not missing,
        matched=tuple(matched),
        missing=tuple(missing),
    )


def inject_compromise(
    cluster: ClusterState,
    attacker: AttackerState,
    node_id: str,
    t_ms: int,
    cause: str = "scenario",
) -> CompromiseRecord:
    """Mark an active node compromised and open a record; repeat injections are no-ops."""
    node = cluster.nodes.get(node_id)
    if node is None or node.phase != NodePhase.ACTIVE:
        phase = node.phase.value if node else "absent"
        raise InvalidInputError(f"cannot compromise node {node_id} in phase {phase}")
    if node_id in attacker.open:
        return attacker.open[node_id]
    node.compromised = True
    record = CompromiseRecord(node_id=node_id, start_ms=t_ms, cause=cause)
    attacker.open[node_id] = record
    logger.debug("Node %s compromised at %.3fs (%s)", node_id, to_s(t_ms), cause)
    return record


def close_dwell_on_termination(record: CompromiseRecord, t_term_ms: int) -> CompromiseRecord:
    if not record.is_open:
        raise InvalidInputError(f"record for {record.node_id} is already closed")
    if t_term_ms < record.start_ms:
        raise InvalidInputError(
            f"termination at {t_term_ms} ms precedes compromise at {record.start_ms} ms"
        )
    return record.model_copy(update={"end_ms": t_term_ms})


def close_on_termination(
    attacker: AttackerState, node_id: str, t_ms: int
) -> Optional[CompromiseRecord]:
    """Close the node's open record, if any, when the node is terminated."""
    record = attacker.open.pop(node_id, None)
    if record is None:
        return None
    closed = close_dwell_on_termination(record, t_ms)
    attacker.closed.append(closed)
    return closed


def close_by_detection(
    attacker: AttackerState, node_id: str, baseline_detection_s: float
) -> CompromiseRecord:
    """Without regeneration the foothold lasts until detection after a fixed delay."""
    record = attacker.open.pop(node_id)
    closed = record.model_copy(update={"end_ms": record.start_ms + to_ms(baseline_detection_s)})
    attacker.closed.append(closed)
    return closed


def dwell_metrics(records: Sequence[CompromiseRecord]) -> DwellStats:
    """Order statistics over closed records; an even count takes the lower-middle median."""
    dwells = sorted(r.end_ms - r.start_ms for r in records if r.end_ms is not None)
    if not dwells:
        raise InvalidInputError("dwell metrics need at least one closed compromise record")
    return DwellStats(
        median_s=to_s(dwells[(len(dwells) - 1) // 2]),
        mean_s=to_s(sum(dwells)) / len(dwells),
        max_s=to_s(dwells[-1]),
        count=len(dwells),
    )
