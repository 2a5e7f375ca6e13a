from pathlib import Path

import pytest

import mtd_mcp_server
from mtd_mcp_server.risk_engine import load_score_table
from mtd_mcp_server.vuln_model import load_scan_report

PACKAGE_FIXTURES = Path(mtd_mcp_server.__file__).parent / "fixtures"
REPORTS_DIR = PACKAGE_FIXTURES / "reports" / "petclinic"
TEST_FIXTURES = Path(__file__).parent.parent / "fixtures"

SERVICES = ["api-gateway", "customers-service", "vets-service", "visits-service"]
DIVERSIFIED = {
    "api-gateway": "python",
    "customers-service": "nodejs",
    "vets-service": "ruby",
}


def report_path(service: str, variant: str) -> Path:
    return REPORTS_DIR / f"{service}.{variant}.json"


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    """Keep MTD_* settings from the developer's shell out of the tests."""
    for name in (
        "MTD_SHRINKAGE_THRESHOLD",
        "MTD_SHRINKAGE_CONVENTION",
        "MTD_ORRM_AGGREGATION",
        "MTD_WEIGHTED_CORRELATION",
        "MTD_SCORE_TABLE",
        "MTD_LOG_LEVEL",
    ):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def java_reports():
    """Homogeneous deployment: every service in its java variant."""
    return [load_scan_report(report_path(service, "java")) for service in SERVICES]


@pytest.fixture
def diversified_reports():
    """Deployment after a 3:4 diversification."""
    return [
        load_scan_report(report_path(service, DIVERSIFIED.get(service, "java")))
        for service in SERVICES
    ]


@pytest.fixture
def all_reports(java_reports):
    extra = [load_scan_report(report_path(s, v)) for s, v in DIVERSIFIED.items()]
    return java_reports + extra


@pytest.fixture
def score_table():
    return load_score_table()
