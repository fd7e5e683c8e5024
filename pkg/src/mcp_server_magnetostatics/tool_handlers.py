"""
Tool handlers for the magnetostatics MCP server.
Exposes single-cell solves, study sweeps, certificate checks and field export.
"""

import logging
import sqlite3
from pathlib import Path
from typing import Any

import mcp.types as types

from .bench_cli import certify_trace, export_field, run_cell, run_study, solve_cell, summary_table
from .certify import certificate_for_method
from .config import METHOD_ORDER, StudyConfig, default_study_config, parse_config
from .errors import MagnetostaticsError
from .material import DEFAULT_S_MAX, estimate_bounds, spline_law_from_csv

logger = logging.getLogger('mcp_magnetostatics_server.tools')

_CELL_PROPERTIES = {
    "method": {"type": "string", "enum": list(METHOD_ORDER)},
    "h_level": {"type": "integer", "minimum": 0},
    "order": {"type": "integer", "enum": [1, 2]},
    "config_path": {"type": "string", "description": "Study config file; the bundled desk study if omitted"},
}


def list_tools():
    """List available tools for the magnetostatics MCP server"""
    logger.debug("Handling list_tools request")
    return [
        types.Tool(
            name="solve_cell",
            description="Solve one (method, h_level, order) cell and record it in the results store",
            inputSchema={
                "type": "object",
                "properties": _CELL_PROPERTIES,
                "required": ["method", "h_level", "order"]
            }
        ),
        types.Tool(
            name="run_study",
            description="Run the sweep over methods, mesh levels and orders; returns the iteration table",
            inputSchema={
                "type": "object",
                "properties": {
                    "config_path": {"type": "string"},
                    "methods": {"type": "array", "items": {"type": "string", "enum": list(METHOD_ORDER)}},
                    "h_levels": {"type": "array", "items": {"type": "integer"}},
                    "orders": {"type": "array", "items": {"type": "integer"}},
                    "threads": {"type": "integer", "minimum": 1}
                },
                "required": []
            }
        ),
        types.Tool(
            name="certify_trace",
            description="Check a trace CSV against its convergence certificate",
            inputSchema={
                "type": "object",
                "properties": {
                    "trace_path": {"type": "string"},
                    "config_path": {"type": "string"},
                    "method": {"type": "string", "enum": list(METHOD_ORDER)}
                },
                "required": ["trace_path"]
            }
        ),
        types.Tool(
            name="export_field",
            description="Solve a cell and write a legacy-VTK file with a per node and |curl a| per triangle",
            inputSchema={
                "type": "object",
                "properties": {**_CELL_PROPERTIES, "path": {"type": "string"}},
                "required": ["method", "h_level", "order", "path"]
            }
        ),
        types.Tool(
            name="material_bounds",
            description="Monotonicity bounds (gamma, L) of a B-H curve and the certificate constants per method",
            inputSchema={
                "type": "object",
                "properties": {
                    "bh_csv": {"type": "string", "description": "Two-column B-H CSV; the bundled curve if omitted"},
                    "s_max": {"type": "number"},
                    "nu_bar": {"type": "number"}
                },
                "required": []
            }
        ),
        types.Tool(
            name="list_cells",
            description="List the cells recorded in the results store",
            inputSchema={
                "type": "object",
                "properties": {
                    "study_name": {"type": "string"}
                },
                "required": []
            }
        )
    ]


def _config(arguments: dict[str, Any]) -> StudyConfig:
    path = arguments.get("config_path")
    return parse_config(path) if path else default_study_config()


def _cell_arguments(arguments: dict[str, Any] | None) -> tuple[str, int, int]:
    if not arguments or not all(k in arguments for k in ["method", "h_level", "order"]):
        raise ValueError("Missing required arguments: method, h_level, order")
    return str(arguments["method"]), int(arguments["h_level"]), int(arguments["order"])


def format_cells(rows: list[dict[str, Any]]) -> str:
    text = "| Study | Cell | Dofs | Iterations | Terminated | Final energy | Certificate | Wall time |\n"
    text += "|-------|------|------|------------|------------|--------------|-------------|-----------|\n"
    for row in rows:
        energy = f"{row['final_energy']:.10g}" if row['final_energy'] is not None else "-"
        text += f"| {row['study_name']} | {row['cell_id']} | {row['dofs']} | {row['iterations']} | "
        text += f"{row['terminated']} | {energy} | {row['certificate'] or row['error'] or ''} | "
        text += f"{row['wall_time']:.2f}s |\n"
    return text


def handle_call_tool(db, name: str, arguments: dict[str, Any] | None) -> list[types.TextContent | types.ImageContent | types.EmbeddedResource]:
    """Handle tool execution requests"""
    try:
        if name == "solve_cell":
            method, h_level, order = _cell_arguments(arguments)
            config = _config(arguments)
            cell = solve_cell(config, method, h_level, order, out_dir=Path(config.output_dir))
            db.record_cell(cell, config.name)
            if cell.error is not None:
                return [types.TextContent(type="text", text=f"Cell {cell.cell_id} failed: {cell.error}")]
            text = (f"Cell {cell.cell_id}: {cell.terminated} after {cell.iterations} iterations\n"
                    f"Dofs: {cell.dofs}\nFinal energy: {cell.final_energy!r}\n"
                    f"Certificate: {cell.certificate}\nTrace: {cell.trace_path}")
            return [types.TextContent(type="text", text=text)]

        elif name == "run_study":
            arguments = arguments or {}
            config = _config(arguments)
            result = run_study(config, threads=arguments.get("threads"), db=db,
                               methods=arguments.get("methods"), h_levels=arguments.get("h_levels"),
                               orders=arguments.get("orders"))
            status = "all cells converged" if result.converged else "some cells did not converge"
            text = f"Study {result.name}: {status}\n\n{summary_table(result)}\nSummary: {result.summary_path}"
            return [types.TextContent(type="text", text=text)]

        elif name == "certify_trace":
            if not arguments or "trace_path" not in arguments:
                raise ValueError("Missing trace_path argument")
            config = parse_config(arguments["config_path"]) if arguments.get("config_path") else None
            report = certify_trace(arguments["trace_path"], config, arguments.get("method"))
            return [types.TextContent(type="text", text=report.to_text())]

        elif name == "export_field":
            method, h_level, order = _cell_arguments(arguments)
            if "path" not in arguments:
                raise ValueError("Missing path argument")
            result = run_cell(_config(arguments), method, h_level, order)
            path = export_field(result.problem.space, result.state.coeffs, arguments["path"])
            return [types.TextContent(
                type="text",
                text=f"Field written to {path} ({result.state.terminated} after {result.state.iterations} iterations)"
            )]

        elif name == "material_bounds":
            arguments = arguments or {}
            s_max = float(arguments.get("s_max", DEFAULT_S_MAX))
            law = spline_law_from_csv(arguments.get("bh_csv"), s_max=s_max)
            gamma, L = estimate_bounds(law, s_max)
            laws = {0: law}
            text = f"gamma = {gamma!r}\nL = {L!r}\n"
            nu_bar = arguments.get("nu_bar", default_study_config().solvers["fixedpoint"].nu_bar)
            for method in METHOD_ORDER:
                cert = certificate_for_method(method, laws, 0.5, 0.1, nu_bar=nu_bar, s_max=s_max)
                text += f"{method}: tau* = {cert.tau_star:.6g}, q = {cert.q!r}, C = {cert.C:.6g}\n"
            return [types.TextContent(type="text", text=text)]

        elif name == "list_cells":
            rows = db.list_cells((arguments or {}).get("study_name"))
            if not rows:
                return [types.TextContent(type="text", text="No cells recorded.")]
            return [types.TextContent(type="text", text=format_cells(rows))]

        else:
            raise ValueError(f"Unsupported tool: {name}")

    except sqlite3.Error as e:
        logger.error(f"Database error handling tool {name}: {str(e)}")
        return [types.TextContent(type="text", text=f"Database error: {str(e)}")]
    except ValueError as e:
        logger.warning(f"Value error handling tool {name}: {str(e)}")
        return [types.TextContent(type="text", text=f"Input error: {str(e)}")]
    except MagnetostaticsError as e:
        logger.error(f"Solver error handling tool {name}: {str(e)}")
        return [types.TextContent(type="text", text=f"Solver error: {type(e).__name__}: {str(e)}")]
    except Exception as e:
        logger.error(f"Unexpected error handling tool {name}: {str(e)}", exc_info=True)
        return [types.TextContent(type="text", text=f"Unexpected server error: {str(e)}")]
