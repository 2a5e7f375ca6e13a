"""Security risk scoring and risk-driven diversification planning."""

from __future__ import annotations

import json
import logging
import random
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .utils.errors import InvalidInputError, PlanningError, validate_model
from .vuln_model import Layer, ScanReport, ScoringSource, attack_surface_units

logger = logging.getLogger(__name__)

FIXTURES_DIR = Path(__file__).parent / "fixtures"
DEFAULT_SCORE_TABLE = FIXTURES_DIR / "owasp_risk_scores.json"


class RiskMethod(str, Enum):
    CVSS_AVERAGE = "cvss_average"
    CVSS_SHRINKAGE = "cvss_shrinkage"
    ORRM_SUM = "orrm_sum"
    ORRM_MEAN = "orrm_mean"


ORRM_METHODS = frozenset({RiskMethod.ORRM_SUM, RiskMethod.ORRM_MEAN})


_CONVENTION_ALIASES = {"paper": "app_mean"}


class ShrinkageConvention(str, Enum):
    APP_MEAN = "app_mean"
    IMDB = "imdb"

    @classmethod
    def _missing_(cls, value):
        alias = _CONVENTION_ALIASES.get(str(value).strip().lower())
        return cls(alias) if alias else None


class OrrmAggregation(str, Enum):
    SUM = "sum"
    MEAN = "mean"


class SecurityRisk(BaseModel):
    model_config = ConfigDict(frozen=True)

    service: str
    score: float = Field(ge=0.0)
    method: RiskMethod

    @model_validator(mode="after")
    def _cvss_bound(self) -> "SecurityRisk":
        if self.method not in ORRM_METHODS and self.score > 10.0:
            raise ValueError(f"{self.method.value} score must not exceed 10, got {self.score}")
        return self


class ShrinkageParams(BaseModel):
    """Inputs of the shrinkage estimator.

    v: vulnerabilities detected in the microservice
    a: minimum-vulnerability threshold
    C: mean severity of the microservice's vulnerabilities
    R: mean severity over the whole application
    """

    model_config = ConfigDict(frozen=True)

    v: int = Field(ge=0)
    a: int = Field(ge=0)
    C: float = Field(ge=0.0, le=10.0)
    R: float = Field(ge=0.0, le=10.0)


class OwaspScoreTable(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    scores: Dict[int, float]
    default_score: float = Field(alias="default", ge=0.0, le=10.0)
    categories: Dict[int, str] = Field(default_factory=dict)

    @field_validator("scores")
    @classmethod
    def _score_range(cls, scores: Dict[int, float]) -> Dict[int, float]:
        for cwe_id, score in scores.items():
            if not 0.0 <= score <= 10.0:
                raise ValueError(f"score for CWE-{cwe_id} must lie in [0, 10], got {score}")
        return scores

    def score(self, cwe_id: int) -> float:
        return cwe_score(self, cwe_id)


class DiversificationIndex(BaseModel):
    """Fraction m_d/m of microservices chosen for variant replacement."""

    model_config = ConfigDict(frozen=True)

    m_d: int
    m: int

    @property
    def value(self) -> Fraction:
        return Fraction(self.m_d, self.m)

    def __str__(self) -> str:
        return f"{self.m_d}:{self.m}"


class DiversificationPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: DiversificationIndex
    ranked_services: Tuple[str, ...]
    assignments: Dict[str, str]
    unchanged: Tuple[str, ...]


class ReductionRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    service: str
    layer: str
    units_before: int
    units_after: int
    reduction_pct: Optional[float]


class SurfaceReduction(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: Tuple[ReductionRow, ...]

    def row(self, service: str, layer: str) -> ReductionRow:
        for row in self.rows:
            if row.service == service and row.layer == layer:
                return row
        raise KeyError((service, layer))


def sr_average(severities: Sequence[float]) -> float:
    """Arithmetic mean of base scores.

    Raises:
        InvalidInputError: empty list or score outside [0, 10]
    """
    if not severities:
        raise InvalidInputError("security risk is undefined for an empty severity list")
    for s in severities:
        if not 0.0 <= s <= 10.0:
            raise InvalidInputError(f"severity must lie in [0, 10], got {s}")
    return sum(severities) / len(severities)


def sr_shrinkage(
    p: ShrinkageParams,
    convention: Union[ShrinkageConvention, str] = ShrinkageConvention.APP_MEAN,
) -> float:
    """Shrinkage estimate of the security risk.

    The ``app_mean`` convention weights the application-wide mean R by v/(v+a);
    ``imdb`` gives that weight to the per-service mean C instead.
    """
    total = p.v + p.a
    if total == 0:
        raise InvalidInputError("shrinkage estimator needs v + a > 0")
    if ShrinkageConvention(convention) == ShrinkageConvention.APP_MEAN:
        heavy, light = p.R, p.C
    else:
        heavy, light = p.C, p.R
    return p.v / total * heavy + p.a / total * light


def orrm_risk(likelihood: float, impact: float) -> float:
    if likelihood < 0 or impact < 0:
        raise InvalidInputError(
            f"likelihood and impact must be non-negative, got {likelihood} and {impact}"
        )
    return likelihood * impact


def cwe_score(table: OwaspScoreTable, cwe_id: int) -> float:
    return table.scores.get(cwe_id, table.default_score)


def load_score_table(path: Optional[Union[str, Path]] = None) -> OwaspScoreTable:
    """Load a CWE risk-score table; the shipped table is used when ``path`` is None."""
    path = Path(path) if path else DEFAULT_SCORE_TABLE
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise InvalidInputError(f"cannot read score table {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise InvalidInputError(f"score table {path} is not UTF-8 text: {e}") from e
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"score table {path} is not valid JSON: {e}") from e
    return validate_model(OwaspScoreTable, data)


def service_risk_orrm(
    report: ScanReport,
    table: OwaspScoreTable,
    aggregation: Union[OrrmAggregation, str] = OrrmAggregation.SUM,
) -> SecurityRisk:
    """Count-weighted ORRM risk of one service's application layer."""
    findings = [f for f in report.findings_at(Layer.APPLICATION) if f.count > 0]
    if not findings:
        raise InvalidInputError(
            f"{report.service}/{report.variant} has no application-layer findings"
        )
    score = sum(f.count * cwe_score(table, f.cwe_id) for f in findings)
    method = RiskMethod.ORRM_SUM
    if OrrmAggregation(aggregation) == OrrmAggregation.MEAN:
        score /= sum(f.count for f in findings)
        method = RiskMethod.ORRM_MEAN
    return SecurityRisk(service=report.service, score=score, method=method)


def _cvss_units(report: ScanReport) -> List[float]:
    units: List[float] = []
    for finding in report.findings:
        if finding.scoring_source == ScoringSource.CVSS:
            units.extend([finding.severity] * finding.count)
    return units


def application_mean_severity(reports: Sequence[ScanReport]) -> float:
    """Mean CVSS severity over every vulnerability of the application."""
    units = [s for report in reports for s in _cvss_units(report)]
    return sr_average(units)


def service_risk_cvss(
    report: ScanReport,
    method: Union[RiskMethod, str],
    *,
    app_mean: Optional[float] = None,
    threshold: int = 5,
    convention: Union[ShrinkageConvention, str] = ShrinkageConvention.APP_MEAN,
) -> SecurityRisk:
    """CVSS-based risk of one service, each detected unit counted once."""
    method = RiskMethod(method)
    units = _cvss_units(report)
    if not units:
        raise InvalidInputError(f"{report.service}/{report.variant} has no CVSS-scored findings")
    mean = sr_average(units)
    if method == RiskMethod.CVSS_AVERAGE:
        score = mean
    elif method == RiskMethod.CVSS_SHRINKAGE:
        if app_mean is None:
            raise InvalidInputError("shrinkage needs the application-wide mean severity")
        params = ShrinkageParams(v=len(units), a=threshold, C=mean, R=app_mean)
        score = sr_shrinkage(params, convention)
    else:
        raise InvalidInputError(f"{method.value} is not a CVSS method")
    return SecurityRisk(service=report.service, score=score, method=method)


def risk_table(
    reports: Sequence[ScanReport],
    table: OwaspScoreTable,
    *,
    aggregation: Union[OrrmAggregation, str] = OrrmAggregation.SUM,
    threshold: int = 5,
    convention: Union[ShrinkageConvention, str] = ShrinkageConvention.APP_MEAN,
) -> List[SecurityRisk]:
    """Every applicable risk method for every report; inapplicable methods are skipped."""
    risks: List[SecurityRisk] = []
    try:
        app_mean: Optional[float] = application_mean_severity(reports)
    except InvalidInputError:
        app_mean = None
    for report in reports:
        if any(f.count for f in report.findings_at(Layer.APPLICATION)):
            risks.append(service_risk_orrm(report, table, aggregation))
        if app_mean is not None and _cvss_units(report):
            risks.append(service_risk_cvss(report, RiskMethod.CVSS_AVERAGE))
            risks.append(
                service_risk_cvss(
                    report,
                    RiskMethod.CVSS_SHRINKAGE,
                    app_mean=app_mean,
                    threshold=threshold,
                    convention=convention,
                )
            )
    return risks


def diversification_index(m_d: int, m: int) -> DiversificationIndex:
    if m < 1:
        raise InvalidInputError(f"diversification index needs m >= 1, got {m}")
    if not 0 <= m_d <= m:
        raise InvalidInputError(f"diversification index needs 0 <= m_d <= m, got {m_d}:{m}")
    return DiversificationIndex(m_d=m_d, m=m)


def parse_index(text: str) -> DiversificationIndex:
    """Parse an ``m_d:m`` index string."""
    parts = str(text).split(":")
    if len(parts) != 2:
        raise InvalidInputError(f"diversification index must look like 'm_d:m', got {text!r}")
    try:
        m_d, m = (int(part.strip()) for part in parts)
    except ValueError as e:
        raise InvalidInputError(f"diversification index must be integral, got {text!r}") from e
    return diversification_index(m_d, m)


def rank_services(risks: Sequence[SecurityRisk]) -> List[str]:
    """Descending score, ties by ascending service name."""
    return [r.service for r in sorted(risks, key=lambda r: (-r.score, r.service))]


def plan_diversification(
    risks: Sequence[SecurityRisk],
    index: DiversificationIndex,
    variants: Mapping[str, Set[str]],
    current: Mapping[str, str],
    rng: Optional[random.Random] = None,
) -> DiversificationPlan:
    """Diversify the ``m_d`` riskiest services.

    Raises:
        PlanningError: index does not match the service count, or a selected
            service has no alternative variant
    """
    if index.m != len(risks):
        raise PlanningError(
            f"index {index} expects {index.m} services but {len(risks)} risks were given"
        )
    ranked = rank_services(risks)
    assignments: Dict[str, str] = {}
    for service in ranked[: index.m_d]:
        alternatives = sorted(set(variants.get(service, ())) - {current.get(service)})
        if not alternatives:
            raise PlanningError(f"service {service} has no alternative variant")
        assignments[service] = rng.choice(alternatives) if rng else alternatives[0]
    logger.info("Diversification plan %s: %s", index, assignments)
    return DiversificationPlan(
        index=index,
        ranked_services=tuple(ranked),
        assignments=assignments,
        unchanged=tuple(ranked[index.m_d :]),
    )


def _reduction(before: int, after: int) -> Optional[float]:
    if before == 0:
        return None
    return (1.0 - after / before) * 100.0


def _units_by_service(reports: Sequence[ScanReport]) -> Dict[str, Dict[str, int]]:
    units: Dict[str, Dict[str, int]] = {}
    for report in reports:
        per_layer = units.setdefault(report.service, {layer.value: 0 for layer in Layer})
        for layer in Layer:
            per_layer[layer.value] += attack_surface_units(report, layer)
    for per_layer in units.values():
        per_layer["all"] = sum(per_layer[layer.value] for layer in Layer)
    return units


def evaluate_plan(before: Sequence[ScanReport], after: Sequence[ScanReport]) -> SurfaceReduction:
    """Attack-surface reduction per service and layer, plus an aggregate over all services."""
    units_before = _units_by_service(before)
    units_after = _units_by_service(after)
    if set(units_before) != set(units_after):
        raise InvalidInputError(
            f"before/after cover different services:"
            f" {sorted(units_before)} vs {sorted(units_after)}"
        )
    rows: List[ReductionRow] = []
    layers = [layer.value for layer in Layer] + ["all"]
    for service in units_before:
        for layer in layers:
            b, a = units_before[service][layer], units_after[service][layer]
            rows.append(ReductionRow(
                service=service, layer=layer, units_before=b, units_after=a,
                reduction_pct=_reduction(b, a),
            ))
    for layer in layers:
        b = sum(u[layer] for u in units_before.values())
        a = sum(u[layer] for u in units_after.values())
        rows.append(ReductionRow(
            service="*", layer=layer, units_before=b, units_after=a, reduction_pct=_reduction(b, a)
        ))
    return SurfaceReduction(rows=tuple(rows))
