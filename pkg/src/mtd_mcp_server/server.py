"""MTD MCP Server implementation."""

import json
import logging
from typing import Any, Dict, List, Optional

from fastmcp import FastMCP

from mtd_mcp_server import mtd_tool

logger = logging.getLogger(__name__)

# Initialize FastMCP app
app = FastMCP("mtd_mcp_server")


@app.prompt()
def system_prompt() -> str:
    """Analysis workflow for moving target defense experiments."""
    return """This server simulates moving target defense for containerized microservice
applications.
Typical workflow:
1. correlation_matrix on the homogeneous scan reports shows which services share weaknesses.
2. security_risk ranks services; orrm_sum uses the CWE risk-score table.
3. diversification_plan replaces the variants of the riskiest services and reports the
   attack-surface reduction.
4. regeneration_throughput tells how many nodes a provider can regenerate within a time window.
5. run_scenario runs a full simulation and returns dwell times, regenerations and replay outcomes.
Scan reports are JSON objects {service, variant, findings: [{id, cwe, layer, severity, count}]}.
"""


@app.resource("mtd://providers")
def list_providers() -> str:
    """Shipped provider latency profiles with their end-to-end regeneration time."""
    return json.dumps(mtd_tool.providers_summary(), indent=2)


@app.tool()
def correlation_matrix(
    reports: List[Dict[str, Any]],
    scope: str = "horizontal",
    weighted: Optional[bool] = None,
) -> Dict[str, Any]:
    """
    Build the microservice vulnerability correlation matrix

    Args:
        reports: Scan-report documents, one per (service, variant)
        scope: "horizontal" (application layer) or "vertical" (classes shared by the
               application and image layers)
        weighted: Use finding counts instead of presence for Pearson coefficients.
                  Defaults to MTD_WEIGHTED_CORRELATION.

    Returns:
        Dictionary with the binary matrix, correlated service pairs and pairwise Pearson
        coefficients (null where undefined)
    """
    return mtd_tool.correlation_summary(mtd_tool.parse_reports(reports), scope, weighted)


@app.tool()
def security_risk(
    reports: List[Dict[str, Any]],
    method: str = "orrm_sum",
    score_table: Optional[str] = None,
) -> Dict[str, Any]:
    """
    Score the security risk of each microservice

    Args:
        reports: Scan-report documents
        method: orrm_sum, orrm_mean, cvss_average, cvss_shrinkage or all
        score_table: Path to a CWE risk-score table (optional)

    Returns:
        Dictionary with one risk row per service and method and the service ranking
    """
    return mtd_tool.risk_summary(mtd_tool.parse_reports(reports), method, score_table)


@app.tool()
def diversification_plan(
    reports: List[Dict[str, Any]],
    index: str,
    seed: Optional[int] = None,
    current: Optional[Dict[str, str]] = None,
) -> Dict[str, Any]:
    """
    Plan a risk-driven diversification and evaluate its attack-surface reduction

    Args:
        reports: Scan-report documents for every available variant of every service
        index: Diversification index "m_d:m", m must equal the number of services
        seed: Seed for choosing among several alternative variants (optional)
        current: Current variant per service; defaults to the first report per service

    Returns:
        Dictionary with the ranking, the variant assignments and the per-layer reduction
    """
    return mtd_tool.plan_summary(mtd_tool.parse_reports(reports), index, seed, current)


@app.tool()
def regeneration_throughput(provider: str, horizon_s: float) -> Dict[str, Any]:
    """
    Count the nodes a provider regenerates back-to-back within a time window

    Args:
        provider: aws, gce, azure or openstack
        horizon_s: Window length in seconds

    Returns:
        Dictionary with the per-node regeneration time and the regeneration count
    """
    return mtd_tool.throughput_summary(provider, horizon_s)


@app.tool()
def run_scenario(scenario: str, seed: Optional[int] = None) -> Dict[str, Any]:
    """
    Run a simulation scenario to its horizon

    Args:
        scenario: Path to a scenario file or the name of a shipped scenario
                  (petclinic-azure, petclinic-aws-hourly, petclinic-aws-baseline, minimal)
        seed: Overrides the seed of the scenario file (optional)

    Returns:
        The metrics report
    """
    return mtd_tool.run_summary(scenario, seed).model_dump(mode="json")
