import csv
import random
from collections import defaultdict
from fractions import Fraction

import pytest

from mtd_mcp_server.risk_engine import (
    ORRM_METHODS,
    OrrmAggregation,
    OwaspScoreTable,
    RiskMethod,
    SecurityRisk,
    ShrinkageConvention,
    ShrinkageParams,
    cwe_score,
    diversification_index,
    evaluate_plan,
    load_score_table,
    orrm_risk,
    parse_index,
    plan_diversification,
    rank_services,
    risk_table,
    service_risk_cvss,
    service_risk_orrm,
    sr_average,
    sr_shrinkage,
)
from mtd_mcp_server.utils.errors import InvalidInputError, PlanningError
from mtd_mcp_server.vuln_model import Finding, Layer, ScanReport

from conftest import DIVERSIFIED, SERVICES, TEST_FIXTURES

VARIANTS = {
    "api-gateway": {"java", "python"},
    "customers-service": {"java", "nodejs"},
    "vets-service": {"java", "ruby"},
    "visits-service": {"java"},
}
JAVA = {service: "java" for service in SERVICES}


def _oracle():
    totals = defaultdict(int)
    with open(TEST_FIXTURES / "petclinic_orrm_oracle.csv", newline="") as f:
        for row in csv.DictReader(f):
            assert int(row["count"]) * int(row["risk_score"]) == int(row["weighted_risk"])
            totals[row["service"]] += int(row["weighted_risk"])
    return totals


class TestScoreTable:
    def test_shipped_scores(self, score_table):
        assert cwe_score(score_table, 200) == 7
        assert score_table.score(16) == 6
        assert cwe_score(score_table, 1021) == 3.0
        assert score_table.categories[200] == "A3 - Sensitive Data Exposure"
        assert score_table.categories[524] == "Not Listed"

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidInputError):
            load_score_table(tmp_path / "absent.json")

    def test_not_utf8(self, tmp_path):
        path = tmp_path / "latin1.json"
        path.write_bytes(b'{"scores": {}, "default": 3.0, "categories": {"16": "caf\xe9"}}')
        with pytest.raises(InvalidInputError):
            load_score_table(path)

    def test_score_out_of_range(self, tmp_path):
        path = tmp_path / "table.json"
        path.write_text('{"scores": {"16": 12}, "default": 3.0}')
        with pytest.raises(InvalidInputError):
            load_score_table(path)


class TestOrrm:
    def test_petclinic_scores_match_oracle(self, java_reports, score_table):
        oracle = _oracle()
        scores = {r.service: service_risk_orrm(r, score_table).score for r in java_reports}
        assert scores == oracle
        assert scores == {
            "api-gateway": 431,
            "customers-service": 141,
            "vets-service": 90,
            "visits-service": 51,
        }

    def test_ranking(self, java_reports, score_table):
        risks = [service_risk_orrm(r, score_table) for r in java_reports]
        assert rank_services(risks) == SERVICES

    def test_mean_aggregation(self, java_reports, score_table):
        risk = service_risk_orrm(java_reports[0], score_table, OrrmAggregation.MEAN)
        assert risk.score == pytest.approx(431 / 94)
        assert risk.method == RiskMethod.ORRM_MEAN
        assert service_risk_orrm(java_reports[0], score_table).method == RiskMethod.ORRM_SUM

    def test_mean_rows_in_risk_table(self, java_reports, score_table):
        rows = risk_table(java_reports, score_table, aggregation="mean")
        orrm = [r for r in rows if r.method in ORRM_METHODS]
        assert {r.method for r in orrm} == {RiskMethod.ORRM_MEAN}
        assert all(r.score <= 10 for r in orrm)

    def test_diversified_scores(self, diversified_reports, score_table):
        scores = [service_risk_orrm(r, score_table).score for r in diversified_reports]
        assert scores == [108, 72, 69, 51]

    def test_no_application_findings(self, score_table):
        with pytest.raises(InvalidInputError):
            service_risk_orrm(ScanReport(service="s", variant="v"), score_table)

    def test_orrm_risk(self):
        assert orrm_risk(2, 3) == 6
        with pytest.raises(InvalidInputError):
            orrm_risk(-1, 3)


class TestCvss:
    def test_average(self):
        assert sr_average([5.0, 7.0]) == 6.0
        with pytest.raises(InvalidInputError):
            sr_average([])
        with pytest.raises(InvalidInputError):
            sr_average([5.0, 10.1])

    def test_average_counts_every_unit(self, java_reports):
        gateway = java_reports[0]
        expected = sum(f.severity * f.count for f in gateway.findings_at(Layer.IMAGE)) / 696
        risk = service_risk_cvss(gateway, RiskMethod.CVSS_AVERAGE)
        assert risk.score == pytest.approx(expected)
        assert risk.score == pytest.approx(4892.8 / 696)

    def test_shrinkage_needs_application_mean(self, java_reports):
        with pytest.raises(InvalidInputError):
            service_risk_cvss(java_reports[0], RiskMethod.CVSS_SHRINKAGE)

    def test_service_without_cvss_findings(self):
        finding = Finding(
            id="a", cwe_id=16, layer=Layer.APPLICATION, severity=6, scoring_source="orrm", count=3
        )
        report = ScanReport(service="s", variant="v", findings=(finding,))
        with pytest.raises(InvalidInputError):
            service_risk_cvss(report, RiskMethod.CVSS_AVERAGE)

    def test_cvss_score_bound(self):
        with pytest.raises(ValueError):
            SecurityRisk(service="s", score=11, method=RiskMethod.CVSS_AVERAGE)
        assert SecurityRisk(service="s", score=431, method=RiskMethod.ORRM_SUM).score == 431

    def test_risk_table_covers_every_method(self, java_reports, score_table):
        rows = risk_table(java_reports, score_table)
        assert len(rows) == 12
        assert {r.method for r in rows} == set(RiskMethod) - {RiskMethod.ORRM_MEAN}


class TestShrinkage:
    def test_convex_combination_bound(self):
        rng = random.Random("shrinkage")
        for _ in range(10_000):
            params = ShrinkageParams(
                v=rng.randint(0, 500),
                a=rng.randint(1, 50),
                C=rng.uniform(0, 10),
                R=rng.uniform(0, 10),
            )
            for convention in ShrinkageConvention:
                value = sr_shrinkage(params, convention)
                assert min(params.R, params.C) - 1e-12 <= value <= max(params.R, params.C) + 1e-12

    def test_boundaries(self):
        no_findings = ShrinkageParams(v=0, a=5, C=4.2, R=7.7)
        no_threshold = ShrinkageParams(v=9, a=0, C=4.2, R=7.7)
        assert sr_shrinkage(no_findings) == pytest.approx(4.2, abs=1e-12)
        assert sr_shrinkage(no_threshold) == pytest.approx(7.7, abs=1e-12)
        assert sr_shrinkage(no_findings, "imdb") == pytest.approx(7.7, abs=1e-12)
        assert sr_shrinkage(no_threshold, "imdb") == pytest.approx(4.2, abs=1e-12)

    def test_weights(self):
        params = ShrinkageParams(v=3, a=1, C=2.0, R=6.0)
        assert sr_shrinkage(params) == pytest.approx(0.75 * 6.0 + 0.25 * 2.0)
        imdb = sr_shrinkage(params, ShrinkageConvention.IMDB)
        assert imdb == pytest.approx(0.75 * 2.0 + 0.25 * 6.0)

    @pytest.mark.parametrize("name", ["paper", "Paper", " PAPER "])
    def test_convention_alias(self, name):
        assert ShrinkageConvention(name) is ShrinkageConvention.APP_MEAN
        params = ShrinkageParams(v=3, a=1, C=2.0, R=6.0)
        assert sr_shrinkage(params, name) == sr_shrinkage(params, ShrinkageConvention.APP_MEAN)

    def test_unknown_convention(self):
        with pytest.raises(ValueError):
            ShrinkageConvention("bayes")

    def test_undefined_without_weights(self):
        with pytest.raises(InvalidInputError):
            sr_shrinkage(ShrinkageParams(v=0, a=0, C=1.0, R=2.0))


class TestDiversificationIndex:
    def test_value(self):
        index = diversification_index(3, 4)
        assert index.value == Fraction(3, 4)
        assert str(index) == "3:4"

    @pytest.mark.parametrize("m_d, m", [(5, 4), (-1, 4), (0, 0)])
    def test_out_of_range(self, m_d, m):
        with pytest.raises(InvalidInputError):
            diversification_index(m_d, m)

    def test_index_order(self):
        rng = random.Random("index")
        for _ in range(500):
            m = rng.randint(1, 40)
            m_d = rng.randint(0, m - 1)
            assert diversification_index(m_d + 1, m).value > diversification_index(m_d, m).value
            wider = diversification_index(m_d, m + 1).value
            assert wider <= diversification_index(m_d, m).value
            if m_d > 0:
                assert wider < diversification_index(m_d, m).value

    def test_parse(self):
        assert parse_index(" 2 : 4 ") == diversification_index(2, 4)
        for text in ("3/4", "a:b", "1:2:3"):
            with pytest.raises(InvalidInputError):
                parse_index(text)


class TestPlanning:
    def test_three_of_four(self, java_reports, score_table):
        risks = [service_risk_orrm(r, score_table) for r in java_reports]
        plan = plan_diversification(risks, diversification_index(3, 4), VARIANTS, JAVA)
        assert plan.assignments == DIVERSIFIED
        assert plan.unchanged == ("visits-service",)
        assert plan.ranked_services == tuple(SERVICES)

    def test_zero_index_changes_nothing(self, java_reports, score_table):
        risks = [service_risk_orrm(r, score_table) for r in java_reports]
        plan = plan_diversification(risks, diversification_index(0, 4), VARIANTS, JAVA)
        assert plan.assignments == {}
        assert len(plan.unchanged) == 4

    def test_seeded_choice_among_alternatives(self):
        risks = [SecurityRisk(service="a", score=5, method=RiskMethod.ORRM_SUM)]
        variants = {"a": {"v0", "v1", "v2", "v3"}}
        index = diversification_index(1, 1)
        first = plan_diversification(risks, index, variants, {"a": "v0"}, random.Random(1))
        again = plan_diversification(risks, index, variants, {"a": "v0"}, random.Random(1))
        assert first.assignments == again.assignments
        assert first.assignments["a"] in {"v1", "v2", "v3"}

    def test_ties_break_by_name(self):
        risks = [
            SecurityRisk(service=name, score=10, method=RiskMethod.ORRM_SUM)
            for name in ("zeta", "alpha", "mid")
        ]
        assert rank_services(risks) == ["alpha", "mid", "zeta"]

    def test_ranking_ignores_positive_scaling(self):
        rng = random.Random("scaling")
        for _ in range(300):
            risks = [
                SecurityRisk(
                    service=f"svc-{i}", score=rng.randint(0, 500), method=RiskMethod.ORRM_SUM
                )
                for i in range(rng.randint(1, 12))
            ]
            factor = rng.uniform(0.01, 100.0)
            scaled = [r.model_copy(update={"score": r.score * factor}) for r in risks]
            assert rank_services(scaled) == rank_services(risks)

    def test_plan_ignores_scaled_score_table(self, java_reports, score_table):
        rng = random.Random("table-scaling")
        expected = plan_diversification(
            [service_risk_orrm(r, score_table) for r in java_reports],
            diversification_index(3, 4),
            VARIANTS,
            JAVA,
        )
        for _ in range(20):
            factor = rng.uniform(0.05, 1.0)
            scaled = OwaspScoreTable(
                scores={cwe: score * factor for cwe, score in score_table.scores.items()},
                default=score_table.default_score * factor,
            )
            risks = [service_risk_orrm(r, scaled) for r in java_reports]
            plan = plan_diversification(risks, diversification_index(3, 4), VARIANTS, JAVA)
            assert plan == expected

    def test_larger_index_diversifies_a_superset(self):
        rng = random.Random("superset")
        for _ in range(100):
            m = rng.randint(1, 10)
            services = [f"svc-{i}" for i in range(m)]
            risks = [
                SecurityRisk(service=s, score=rng.randint(0, 50), method=RiskMethod.ORRM_SUM)
                for s in services
            ]
            variants = {s: {"a", "b"} for s in services}
            current = {s: "a" for s in services}
            previous = set()
            for m_d in range(m + 1):
                plan = plan_diversification(
                    risks, diversification_index(m_d, m), variants, current
                )
                assert previous <= set(plan.assignments)
                assert len(plan.assignments) == m_d
                previous = set(plan.assignments)

    def test_index_must_cover_every_service(self, java_reports, score_table):
        risks = [service_risk_orrm(r, score_table) for r in java_reports]
        with pytest.raises(PlanningError):
            plan_diversification(risks, diversification_index(2, 3), VARIANTS, JAVA)

    def test_service_without_alternative(self, java_reports, score_table):
        risks = [service_risk_orrm(r, score_table) for r in java_reports]
        with pytest.raises(PlanningError):
            plan_diversification(risks, diversification_index(4, 4), VARIANTS, JAVA)


class TestEvaluatePlan:
    def test_gateway_reduction(self, java_reports, diversified_reports):
        reduction = evaluate_plan(java_reports, diversified_reports)
        app = reduction.row("api-gateway", "application")
        image = reduction.row("api-gateway", "image")
        combined = reduction.row("api-gateway", "all")
        assert (app.units_before, app.units_after) == (94, 24)
        assert (image.units_before, image.units_after) == (696, 6)
        assert app.reduction_pct == pytest.approx(74.5, abs=0.1)
        assert image.reduction_pct == pytest.approx(99.1, abs=0.1)
        assert combined.reduction_pct >= 95.0

    def test_application_wide_rows(self, java_reports, diversified_reports):
        reduction = evaluate_plan(java_reports, diversified_reports)
        total = reduction.row("*", "application")
        assert (total.units_before, total.units_after) == (167, 78)
        assert reduction.row("visits-service", "all").reduction_pct == 0.0

    def test_empty_layer_has_no_percentage(self):
        finding = Finding(id="a", cwe_id=16, layer=Layer.APPLICATION, severity=6, count=1)
        report = ScanReport(service="s", variant="v", findings=(finding,))
        assert evaluate_plan([report], [report]).row("s", "image").reduction_pct is None

    def test_service_sets_must_match(self, java_reports):
        with pytest.raises(InvalidInputError):
            evaluate_plan(java_reports, java_reports[:2])
