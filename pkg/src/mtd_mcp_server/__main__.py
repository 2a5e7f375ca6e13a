"""Allow running the package with python -m mtd_mcp_server"""

import sys

from .main import main

if __name__ == "__main__":
    sys.exit(main())
