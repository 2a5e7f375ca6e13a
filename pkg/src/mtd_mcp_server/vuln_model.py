"""Vulnerability scan reports, correlation matrices and attack-surface units.

Scan reports are the per-(service, variant) output of a vulnerability assessment
run; findings are keyed by CWE id and layer. Correlation matrices map services to
the weakness classes they expose, either along the application layer
(horizontal) or across the application and image layers (vertical).
"""

from __future__ import annotations

import json
import logging
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .utils.errors import (
    InvalidInputError,
    ParseError,
    UndefinedCorrelationError,
    validate_model,
)

logger = logging.getLogger(__name__)


class Layer(str, Enum):
    APPLICATION = "application"
    IMAGE = "image"


class ScoringSource(str, Enum):
    CVSS = "cvss"
    ORRM = "orrm"


class CorrelationScope(str, Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


class Vulnerability(BaseModel):
    """One detected weakness."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    id: str
    cwe_id: int = Field(alias="cwe", gt=0)
    layer: Layer
    severity: float = Field(ge=0.0, le=10.0)
    scoring_source: ScoringSource = ScoringSource.CVSS


class Finding(Vulnerability):
    """A vulnerability together with the number of times it was detected."""

    count: int = Field(ge=0)

    @property
    def vulnerability(self) -> Vulnerability:
        return Vulnerability.model_validate(self.model_dump(exclude={"count"}))


class ScanReport(BaseModel):
    """All findings for one variant of one microservice."""

    model_config = ConfigDict(frozen=True)

    service: str = Field(min_length=1)
    variant: str = Field(min_length=1)
    findings: Tuple[Finding, ...] = ()

    @model_validator(mode="after")
    def _unique_keys(self) -> "ScanReport":
        seen = set()
        for finding in self.findings:
            key = (finding.layer, finding.cwe_id)
            if key in seen:
                raise ValueError(
                    f"duplicate finding for {self.service}/{self.variant} "
                    f"layer={finding.layer.value} cwe={finding.cwe_id}"
                )
            seen.add(key)
        return self

    @property
    def total_findings(self) -> int:
        return sum(f.count for f in self.findings)

    def findings_at(self, layer: Layer) -> List[Finding]:
        return [f for f in self.findings if f.layer == layer]

    def count_of(self, cwe_id: int, layer: Layer) -> int:
        for finding in self.findings:
            if finding.cwe_id == cwe_id and finding.layer == layer:
                return finding.count
        return 0


class CorrelationMatrix(BaseModel):
    """Binary service x weakness-class matrix."""

    model_config = ConfigDict(frozen=True)

    services: Tuple[str, ...]
    vuln_keys: Tuple[int, ...]
    rows: Tuple[Tuple[int, ...], ...]
    scope: CorrelationScope = CorrelationScope.HORIZONTAL

    @model_validator(mode="after")
    def _check_shape(self) -> "CorrelationMatrix":
        if len(self.rows) != len(self.services):
            raise ValueError("row count does not match services")
        for row in self.rows:
            if len(row) != len(self.vuln_keys):
                raise ValueError("row length does not match vuln_keys")
            if any(v not in (0, 1) for v in row):
                raise ValueError("matrix entries must be 0 or 1")
        return self

    def as_array(self) -> np.ndarray:
        return np.array(self.rows, dtype=np.int8).reshape(len(self.services), len(self.vuln_keys))

    def entry(self, service: str, cwe_id: int) -> int:
        return self.rows[self.services.index(service)][self.vuln_keys.index(cwe_id)]

    def row(self, service: str) -> Tuple[int, ...]:
        return self.rows[self.services.index(service)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scope": self.scope.value,
            "services": list(self.services),
            "vuln_keys": list(self.vuln_keys),
            "rows": [list(r) for r in self.rows],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CorrelationMatrix":
        return validate_model(cls, data)


def parse_scan_report(document: Union[str, bytes, Mapping[str, Any]]) -> ScanReport:
    """Parse and validate a scan-report document.

    Raises:
        ParseError: the document does not match the scan-report schema
        InvalidInputError: severity or count out of range, duplicate keys
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except UnicodeDecodeError as e:
            raise ParseError(f"scan report is not UTF-8 text: {e}", field="<document>") from e
        except json.JSONDecodeError as e:
            raise ParseError(f"scan report is not valid JSON: {e}", field="<document>") from e
    return validate_model(ScanReport, document)


def load_scan_report(path: Union[str, Path]) -> ScanReport:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise InvalidInputError(f"cannot read scan report {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise ParseError(f"scan report {path} is not UTF-8 text: {e}", field="<document>") from e
    report = parse_scan_report(text)
    logger.debug(
        "Loaded scan report %s/%s (%d findings) from %s",
        report.service,
        report.variant,
        report.total_findings,
        path,
    )
    return report


def merge_reports(a: ScanReport, b: ScanReport) -> ScanReport:
    """Merge two reports of the same service variant, summing counts per key."""
    if (a.service, a.variant) != (b.service, b.variant):
        raise InvalidInputError(
            f"cannot merge {a.service}/{a.variant} with {b.service}/{b.variant}"
        )
    merged: Dict[Tuple[Layer, int], Finding] = {}
    for finding in (*a.findings, *b.findings):
        key = (finding.layer, finding.cwe_id)
        if key in merged:
            merged[key] = merged[key].model_copy(
                update={"count": merged[key].count + finding.count}
            )
        else:
            merged[key] = finding
    return ScanReport(service=a.service, variant=a.variant, findings=tuple(merged.values()))


def _group_by_service(reports: Sequence[ScanReport]) -> Dict[str, List[ScanReport]]:
    grouped: Dict[str, List[ScanReport]] = {}
    for report in reports:
        grouped.setdefault(report.service, []).append(report)
    return grouped


def _class_counts(
    reports: Iterable[ScanReport], layers: Iterable[Layer]
) -> Dict[int, int]:
    layers = set(layers)
    counts: Dict[int, int] = {}
    for report in reports:
        for finding in report.findings:
            if finding.layer in layers and finding.count > 0:
                counts[finding.cwe_id] = counts.get(finding.cwe_id, 0) + finding.count
    return counts


def _scope_columns(
    grouped: Mapping[str, List[ScanReport]], scope: CorrelationScope
) -> Tuple[List[int], Tuple[Layer, ...]]:
    everything = [r for rs in grouped.values() for r in rs]
    if scope == CorrelationScope.HORIZONTAL:
        return sorted(_class_counts(everything, [Layer.APPLICATION])), (Layer.APPLICATION,)
    app = set(_class_counts(everything, [Layer.APPLICATION]))
    image = set(_class_counts(everything, [Layer.IMAGE]))
    return sorted(app & image), (Layer.APPLICATION, Layer.IMAGE)


def presence_vectors(
    reports: Sequence[ScanReport],
    scope: Union[CorrelationScope, str] = CorrelationScope.HORIZONTAL,
    weighted: bool = False,
) -> Tuple[List[int], Dict[str, np.ndarray]]:
    """Per-service vectors over the scope's weakness classes.

    Binary presence by default; ``weighted`` uses finding counts instead.
    """
    if not reports:
        raise InvalidInputError("at least one scan report is required")
    scope = CorrelationScope(scope)
    grouped = _group_by_service(reports)
    columns, layers = _scope_columns(grouped, scope)
    vectors: Dict[str, np.ndarray] = {}
    for service, service_reports in grouped.items():
        counts = _class_counts(service_reports, layers)
        values = [counts.get(cwe, 0) for cwe in columns]
        vector = np.array(values, dtype=float)
        vectors[service] = vector if weighted else (vector > 0).astype(float)
    return columns, vectors


def build_correlation_matrix(
    reports: Sequence[ScanReport],
    scope: Union[CorrelationScope, str] = CorrelationScope.HORIZONTAL,
) -> CorrelationMatrix:
    """Build the microservice vulnerability correlation matrix.

    Rows follow the first appearance of each service in ``reports``; columns
    are ascending CWE ids.
    """
    scope = CorrelationScope(scope)
    columns, vectors = presence_vectors(reports, scope, weighted=False)
    rows = tuple(tuple(int(v) for v in vector) for vector in vectors.values())
    return CorrelationMatrix(
        services=tuple(vectors), vuln_keys=tuple(columns), rows=rows, scope=scope
    )


def correlated_pairs(
    matrix: CorrelationMatrix,
) -> List[Tuple[frozenset, frozenset]]:
    """Service pairs sharing at least one weakness class, with the shared classes."""
    entries = matrix.as_array().astype(bool)
    pairs = []
    for i, j in combinations(range(len(matrix.services)), 2):
        shared = np.flatnonzero(entries[i] & entries[j])
        if shared.size:
            pairs.append(
                (
                    frozenset((matrix.services[i], matrix.services[j])),
                    frozenset(matrix.vuln_keys[k] for k in shared),
                )
            )
    return pairs


def pearson_correlation(a: Sequence[float], b: Sequence[float]) -> float:
    """Pearson coefficient of two equally long vectors.

    Raises:
        InvalidInputError: lengths differ or are shorter than 2, or a value is NaN or infinite
        UndefinedCorrelationError: either vector is constant
    """
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise InvalidInputError(
            f"vectors must be one-dimensional, equally long and of length >= 2, "
            f"got {x.shape} and {y.shape}"
        )
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise InvalidInputError("vectors must hold finite values only")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    r = float(np.corrcoef(x, y)[0, 1])
    return max(-1.0, min(1.0, r))


def service_correlations(
    reports: Sequence[ScanReport],
    scope: Union[CorrelationScope, str] = CorrelationScope.HORIZONTAL,
    weighted: bool = False,
) -> Dict[Tuple[str, str], Optional[float]]:
    """Pearson coefficient for every service pair; ``None`` where undefined."""
    _, vectors = presence_vectors(reports, scope, weighted=weighted)
    result: Dict[Tuple[str, str], Optional[float]] = {}
    for s1, s2 in combinations(vectors, 2):
        try:
            result[(s1, s2)] = pearson_correlation(vectors[s1], vectors[s2])
        except InvalidInputError:
            result[(s1, s2)] = None
    return result


def attack_surface_units(report: ScanReport, layer: Union[Layer, str]) -> int:
    """Each detected vulnerability counts as one attack-surface unit."""
    layer = Layer(layer)
    return sum(f.count for f in report.findings if f.layer == layer)
