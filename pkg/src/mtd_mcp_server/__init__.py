"""Moving target defense simulator and MCP server."""

from mtd_mcp_server.main import main

__version__ = "0.1.0"

__all__ = ["main"]
