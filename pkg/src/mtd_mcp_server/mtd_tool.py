"""Analysis wrappers shared by the CLI and the MCP tools."""

import logging
import random
from typing import Any, Dict, Iterable, List, Mapping, Optional, Union

from .cluster_sim import available_providers, load_provider_profile, regeneration_throughput
from .config import get_config
from .risk_engine import (
    ORRM_METHODS,
    OrrmAggregation,
    OwaspScoreTable,
    RiskMethod,
    SecurityRisk,
    application_mean_severity,
    evaluate_plan,
    load_score_table,
    parse_index,
    plan_diversification,
    rank_services,
    risk_table,
    service_risk_cvss,
    service_risk_orrm,
)
from .scenario import MetricsReport, load_scenario
from .simulator import run
from .utils.errors import InvalidInputError
from .vuln_model import (
    CorrelationScope,
    ScanReport,
    build_correlation_matrix,
    correlated_pairs,
    load_scan_report,
    parse_scan_report,
    service_correlations,
)

logger = logging.getLogger(__name__)


def parse_reports(documents: Iterable[Union[str, Mapping[str, Any]]]) -> List[ScanReport]:
    reports = [parse_scan_report(doc) for doc in documents]
    if not reports:
        raise InvalidInputError("at least one scan report is required")
    return reports


def load_reports(paths: Iterable[str]) -> List[ScanReport]:
    reports = [load_scan_report(path) for path in paths]
    if not reports:
        raise InvalidInputError("at least one scan report is required")
    return reports


def _score_table(path: Optional[str] = None) -> OwaspScoreTable:
    if path:
        return load_score_table(path)
    return load_score_table(get_config().score_table)


def correlation_summary(
    reports: List[ScanReport],
    scope: str = "horizontal",
    weighted: Optional[bool] = None,
) -> Dict[str, Any]:
    try:
        if scope not in {s.value for s in CorrelationScope}:
            raise InvalidInputError(f"scope must be horizontal or vertical, got {scope!r}")
        if weighted is None:
            weighted = get_config().weighted_correlation
        matrix = build_correlation_matrix(reports, scope)
        pairs = [
            {"services": sorted(services), "cwes": sorted(cwes)}
            for services, cwes in correlated_pairs(matrix)
        ]
        pearson = [
            {"a": a, "b": b, "r": r}
            for (a, b), r in service_correlations(reports, scope, weighted=weighted).items()
        ]
        return {
            "matrix": matrix.to_dict(),
            "correlated_pairs": pairs,
            "pearson": pearson,
            "weighted": weighted,
        }
    except Exception as e:
        logger.error(f"Failed to build {scope} correlation matrix: {e}")
        raise


def _risks_for(
    reports: List[ScanReport], method: str, table: OwaspScoreTable
) -> List[SecurityRisk]:
    config = get_config()
    if method == "all":
        return risk_table(
            reports,
            table,
            aggregation=config.orrm_aggregation,
            threshold=config.shrinkage_threshold,
            convention=config.shrinkage_convention,
        )
    method = RiskMethod(method)
    if method in ORRM_METHODS:
        aggregation = (
            OrrmAggregation.MEAN if method == RiskMethod.ORRM_MEAN else OrrmAggregation.SUM
        )
        return [service_risk_orrm(r, table, aggregation) for r in reports]
    if method == RiskMethod.CVSS_AVERAGE:
        return [service_risk_cvss(r, method) for r in reports]
    app_mean = application_mean_severity(reports)
    return [
        service_risk_cvss(
            r,
            method,
            app_mean=app_mean,
            threshold=config.shrinkage_threshold,
            convention=config.shrinkage_convention,
        )
        for r in reports
    ]


def risk_summary(
    reports: List[ScanReport],
    method: str = "orrm_sum",
    table_path: Optional[str] = None,
) -> Dict[str, Any]:
    try:
        if method != "all" and method not in {m.value for m in RiskMethod}:
            raise InvalidInputError(f"unknown risk method {method!r}")
        risks = _risks_for(reports, method, _score_table(table_path))
        ranked_on = [r for r in risks if method != "all" or r.method in ORRM_METHODS]
        return {
            "method": method,
            "risks": [
                {"service": r.service, "method": r.method.value, "score": r.score}
                for r in risks
            ],
            "ranking": rank_services(ranked_on),
        }
    except Exception as e:
        logger.error(f"Failed to compute {method} security risk: {e}")
        raise


def plan_summary(
    reports: List[ScanReport],
    index: str,
    seed: Optional[int] = None,
    current: Optional[Mapping[str, str]] = None,
) -> Dict[str, Any]:
    """Plan a diversification over every variant in ``reports`` and evaluate it.

    The current deployment defaults to the first report seen for each service.
    """
    try:
        by_key: Dict[tuple, ScanReport] = {}
        variants: Dict[str, List[str]] = {}
        for report in reports:
            by_key[(report.service, report.variant)] = report
            variants.setdefault(report.service, []).append(report.variant)
        deployment = {service: names[0] for service, names in variants.items()}
        for service, variant in (current or {}).items():
            if (service, variant) not in by_key:
                raise InvalidInputError(
                    f"no scan report for current deployment {service}/{variant}"
                )
            deployment[service] = variant

        table = _score_table()
        aggregation = get_config().orrm_aggregation
        before = [by_key[(s, v)] for s, v in deployment.items()]
        risks = [service_risk_orrm(r, table, aggregation) for r in before]
        rng = None if seed is None else random.Random(f"{seed}:diversify")
        plan = plan_diversification(
            risks,
            parse_index(index),
            {s: set(v) for s, v in variants.items()},
            deployment,
            rng,
        )
        after = [by_key[(s, plan.assignments.get(s, v))] for s, v in deployment.items()]
        return {
            "index": str(plan.index),
            "risks": {r.service: r.score for r in risks},
            "ranked_services": list(plan.ranked_services),
            "assignments": dict(plan.assignments),
            "unchanged": list(plan.unchanged),
            "attack_surface": evaluate_plan(before, after).model_dump(mode="json"),
        }
    except Exception as e:
        logger.error(f"Failed to plan diversification {index}: {e}")
        raise


def throughput_summary(provider: str, horizon_s: float) -> Dict[str, Any]:
    try:
        profile = load_provider_profile(provider)
        return {
            "provider": profile.name,
            "horizon_s": horizon_s,
            "regeneration_s": profile.regeneration_s,
            "regenerations": regeneration_throughput(profile, horizon_s),
        }
    except Exception as e:
        logger.error(f"Failed to compute regeneration throughput for {provider}: {e}")
        raise


def providers_summary() -> List[Dict[str, Any]]:
    profiles = [load_provider_profile(name) for name in available_providers()]
    return [
        {**profile.model_dump(mode="json"), "regeneration_s": profile.regeneration_s}
        for profile in profiles
    ]


def run_summary(scenario: str, seed: Optional[int] = None) -> MetricsReport:
    try:
        return run(load_scenario(scenario), seed)
    except Exception as e:
        logger.error(f"Failed to run scenario {scenario}: {e}")
        raise
