"""
Magnetostatics MCP Server

Nonlinear 2D magnetostatics by generalized gradient descent: fixed-point,
Kacanov and damped Newton iterations with Armijo backtracking, plus the
convergence certificates that go with them. Served over the Model Context
Protocol and through the magnetostatics-bench command line.
"""

import asyncio
import argparse

__version__ = "0.1.0"

from .bench_cli import configure_logging
from .server import main as _main

def main():
    """Main entry point for the Magnetostatics MCP Server when run as a module"""
    parser = argparse.ArgumentParser(description="Magnetostatics MCP Server")
    parser.add_argument(
        "--results-db", type=str, default="./results/study_cells.db", help="Path to the SQLite results store"
    )
    parser.add_argument(
        "--log-level", type=str, default="INFO", help="Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)"
    )

    args = parser.parse_args()
    configure_logging(args.log_level)

    # Run the server
    asyncio.run(_main(args.results_db))

__all__ = ["main", "_main", "__version__"]
