"""Scenario files and metrics reports."""

from __future__ import annotations

import csv
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr

from .attacker_sim import AttackerModel, DwellStats
from .cluster_sim import ProviderProfile, RegenerationPolicy, VictimSelection, load_provider_profile
from .risk_engine import (
    OrrmAggregation,
    OwaspScoreTable,
    ShrinkageConvention,
    SurfaceReduction,
    load_score_table,
    parse_index,
)
from .utils.errors import InvalidInputError, InvariantViolation, ScenarioError, validate_model
from .vuln_model import ScanReport, load_scan_report

logger = logging.getLogger(__name__)

SCENARIOS_DIR = Path(__file__).parent / "fixtures" / "scenarios"


class DiversifyTrigger(str, Enum):
    SCHEDULED = "scheduled"
    MANUAL = "manual"


class DiversifyPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: str
    trigger: DiversifyTrigger = DiversifyTrigger.SCHEDULED
    period_s: Optional[float] = Field(default=None, gt=0)
    at_s: Tuple[float, ...] = ()


class ScenarioSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    victim_selection: VictimSelection = VictimSelection.RANDOM
    orrm_aggregation: OrrmAggregation = OrrmAggregation.SUM
    shrinkage_threshold: int = Field(default=5, ge=0)
    shrinkage_convention: ShrinkageConvention = ShrinkageConvention.APP_MEAN
    score_table: Optional[str] = None


class Scenario(BaseModel):
    """One experiment: a provider, a cluster, MTD policies, an attacker and fixtures."""

    model_config = ConfigDict(frozen=True)

    name: str = "scenario"
    provider: str
    cluster_size: int = Field(ge=1)
    maturity_level: int = Field(default=3, ge=1, le=3)
    containers: Optional[int] = Field(default=None, ge=0)
    regeneration: Optional[RegenerationPolicy] = None
    diversify: Optional[DiversifyPolicy] = None
    attacker: Optional[AttackerModel] = None
    fixtures: Dict[str, Dict[str, str]] = Field(default_factory=dict)
    deployment: Dict[str, str] = Field(default_factory=dict)
    seed: int = 0
    horizon_s: float = Field(gt=0)
    settings: ScenarioSettings = Field(default_factory=ScenarioSettings)

    _profile: Optional[ProviderProfile] = PrivateAttr(default=None)
    _reports: Dict[Tuple[str, str], ScanReport] = PrivateAttr(default_factory=dict)
    _score_table: Optional[OwaspScoreTable] = PrivateAttr(default=None)

    @property
    def profile(self) -> ProviderProfile:
        if self._profile is None:
            self._profile = load_provider_profile(self.provider)
        return self._profile

    @property
    def score_table(self) -> OwaspScoreTable:
        if self._score_table is None:
            self._score_table = load_score_table(self.settings.score_table)
        return self._score_table

    @property
    def services(self) -> List[str]:
        return list(self.fixtures)

    def variants_of(self, service: str) -> List[str]:
        return list(self.fixtures.get(service, {}))

    def initial_variant(self, service: str) -> str:
        return self.deployment.get(service) or self.variants_of(service)[0]

    def report_for(self, service: str, variant: str) -> ScanReport:
        try:
            return self._reports[(service, variant)]
        except KeyError:
            raise ScenarioError(f"no scan report for {service}/{variant}") from None

    @property
    def container_total(self) -> int:
        return self.cluster_size if self.containers is None else self.containers


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise ScenarioError(f"scenario {path} is not UTF-8 text: {e}") from e
    except json.JSONDecodeError as e:
        raise ScenarioError(f"scenario {path} is not valid JSON: {e}") from e


def resolve_scenario_path(path: Union[str, Path]) -> Path:
    """Accept a path or the name of a shipped scenario (with or without ``.json``)."""
    candidate = Path(path)
    if candidate.exists():
        return candidate
    shipped = SCENARIOS_DIR / (candidate.name if candidate.suffix else f"{candidate.name}.json")
    return shipped if shipped.exists() else candidate


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Load and fully validate a scenario file.

    Settings come from the file alone; the MTD_* environment does not apply.

    Raises:
        ScenarioError: missing fixture, unknown provider or service, invalid
            index, inconsistent policy
        ParseError: schema violation
    """
    path = resolve_scenario_path(path)
    scenario = validate_model(Scenario, _read_json(path))

    try:
        profile = load_provider_profile(scenario.provider)
    except InvalidInputError:
        candidate = path.parent / scenario.provider
        if not candidate.exists():
            raise ScenarioError(f"unknown provider {scenario.provider!r}") from None
        profile = load_provider_profile(candidate)
    scenario._profile = profile

    if scenario.settings.score_table:
        table_path = (path.parent / scenario.settings.score_table).resolve()
        try:
            scenario._score_table = load_score_table(table_path)
        except InvalidInputError as e:
            raise ScenarioError(f"invalid score table in settings: {e}") from e

    if scenario.regeneration is not None and scenario.maturity_level < 2:
        raise ScenarioError(
            "node regeneration needs a cloud-resilient or cloud-native application "
            f"(maturity level 2 or 3), got level {scenario.maturity_level}"
        )

    for service, variants in scenario.fixtures.items():
        if not variants:
            raise ScenarioError(f"service {service} lists no variants")
        for variant, relative in variants.items():
            report_path = (path.parent / relative).resolve()
            if not report_path.exists():
                raise ScenarioError(f"missing fixture for {service}/{variant}: {report_path}")
            report = load_scan_report(report_path)
            if (report.service, report.variant) != (service, variant):
                raise ScenarioError(
                    f"fixture {report_path} holds {report.service}/{report.variant}, "
                    f"expected {service}/{variant}"
                )
            scenario._reports[(service, variant)] = report

    for service, variant in scenario.deployment.items():
        if variant not in scenario.fixtures.get(service, {}):
            raise ScenarioError(f"deployment names unknown fixture {service}/{variant}")

    if scenario.diversify is not None:
        try:
            index = parse_index(scenario.diversify.index)
        except InvalidInputError as e:
            raise ScenarioError(f"invalid diversification index: {e}") from e
        if index.m != len(scenario.fixtures):
            raise ScenarioError(
                f"index {index} expects {index.m} services,"
                f" fixtures define {len(scenario.fixtures)}"
            )
        diversify = scenario.diversify
        if diversify.trigger == DiversifyTrigger.SCHEDULED and not diversify.period_s:
            raise ScenarioError("scheduled diversification needs period_s > 0")

    if scenario.attacker is not None:
        for script in scenario.attacker.scripts:
            for service in script.services:
                if service not in scenario.fixtures:
                    raise ScenarioError(f"script {script.id} references unknown service {service}")

    logger.info(
        "Loaded scenario %s: provider=%s N=%d horizon=%ss",
        scenario.name,
        profile.name,
        scenario.cluster_size,
        scenario.horizon_s,
    )
    return scenario


class DwellRecord(BaseModel):
    node_id: str
    start_s: float
    end_s: float
    dwell_s: float
    cause: str


class DwellSection(BaseModel):
    stats: Optional[DwellStats] = None
    records: List[DwellRecord] = Field(default_factory=list)
    open_compromises: int = 0


class RegenerationTiming(BaseModel):
    node_id: str
    started_at_s: float
    completed_at_s: float
    duration_s: float


class RegenerationSection(BaseModel):
    strategy: Optional[str] = None
    count: int = 0
    passes: int = 0
    wall_time_s: float = 0.0
    last_completed_at_s: Optional[float] = None
    timings: List[RegenerationTiming] = Field(default_factory=list)


class RiskRow(BaseModel):
    service: str
    variant: str
    method: str
    score: float


class AppliedPlan(BaseModel):
    at_s: float
    index: str
    ranked_services: List[str]
    assignments: Dict[str, str]
    unchanged: List[str]


class ReplayOutcome(BaseModel):
    at_s: float
    script_id: str
    success: bool
    matched: int
    missing: int


class ReplaySection(BaseModel):
    attempts: int = 0
    successes: int = 0
    failures: int = 0
    outcomes: List[ReplayOutcome] = Field(default_factory=list)


class MetricsReport(BaseModel):
    scenario: str
    provider: str
    seed: int
    horizon_s: float
    cluster_size: int
    dwell: DwellSection = Field(default_factory=DwellSection)
    regeneration: RegenerationSection = Field(default_factory=RegenerationSection)
    risks: List[RiskRow] = Field(default_factory=list)
    diversification: List[AppliedPlan] = Field(default_factory=list)
    attack_surface: Optional[SurfaceReduction] = None
    replays: ReplaySection = Field(default_factory=ReplaySection)
    availability_losses: int = 0
    events_processed: int = 0

    def check_consistency(self) -> "MetricsReport":
        replays = self.replays
        if replays.successes + replays.failures != replays.attempts:
            raise InvariantViolation("replay successes + failures != attempts")
        if len(replays.outcomes) != replays.attempts:
            raise InvariantViolation("replay outcome list does not match attempts")
        if sum(o.success for o in replays.outcomes) != replays.successes:
            raise InvariantViolation("replay success count does not match outcomes")
        regeneration = self.regeneration
        if len(regeneration.timings) != regeneration.count:
            raise InvariantViolation("regeneration timings do not match regeneration count")
        durations = [t.duration_s for t in regeneration.timings]
        if regeneration.wall_time_s > sum(durations) + 1e-6:
            raise InvariantViolation("regeneration wall time exceeds the summed timings")
        if durations and regeneration.wall_time_s < max(durations) - 1e-6:
            raise InvariantViolation("regeneration wall time is shorter than one regeneration")
        stats = self.dwell.stats
        if (stats.count if stats else 0) != len(self.dwell.records):
            raise InvariantViolation("dwell stats count does not match closed records")
        return self


class ReportFormat(str, Enum):
    JSON = "json"
    CSV = "csv"


CSV_HEADER = ("series", "at_s", "key", "value")


def csv_rows(report: MetricsReport) -> List[Tuple[Any, ...]]:
    rows: List[Tuple[Any, ...]] = []
    for r in report.dwell.records:
        rows.append(("dwell", r.start_s, r.node_id, r.dwell_s))
    for t in report.regeneration.timings:
        rows.append(("regeneration", t.completed_at_s, t.node_id, t.duration_s))
    for o in report.replays.outcomes:
        rows.append(("replay", o.at_s, o.script_id, int(o.success)))
    for risk in report.risks:
        rows.append(("risk", "", f"{risk.service}/{risk.variant}/{risk.method}", risk.score))
    for plan in report.diversification:
        for service, variant in plan.assignments.items():
            rows.append(("diversification", plan.at_s, service, variant))
    if report.attack_surface is not None:
        for row in report.attack_surface.rows:
            value = "" if row.reduction_pct is None else row.reduction_pct
            rows.append(("surface", "", f"{row.service}/{row.layer}", value))
    return rows


def emit(report: MetricsReport, format: Union[ReportFormat, str], path: Union[str, Path]) -> Path:
    """Write the report as JSON or long-form CSV.

    Raises:
        OSError: the path is not writable
    """
    path = Path(path)
    fmt = ReportFormat(format)
    if fmt == ReportFormat.JSON:
        path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    else:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_HEADER)
            writer.writerows(csv_rows(report))
    logger.info("Wrote %s report to %s", fmt.value, path)
    return path


def load_report(path: Union[str, Path]) -> MetricsReport:
    return MetricsReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
