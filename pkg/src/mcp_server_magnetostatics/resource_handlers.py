"""
Resource handlers for the magnetostatics MCP server.
Serves study summaries, single cell details and the bounds of the bundled material.
"""

import logging
from pydantic import AnyUrl

from .material import DEFAULT_S_MAX, bundled_bh_curve, estimate_bounds, spline_law_from_csv

logger = logging.getLogger('mcp_magnetostatics_server.resources')


def handle_list_resources():
    """Handle resource listing - returns a list of available resources"""
    from mcp.types import Resource, ResourceTemplate

    logger.debug("Handling list_resources request")
    return [
        Resource(
            uri=AnyUrl("study://summary/all"),
            name="All Studies Summary",
            description="Iteration counts of every recorded cell, grouped by study",
            mimeType="text/plain",
        ),
        Resource(
            uri=AnyUrl("material://bounds/bundled"),
            name="Bundled Material Bounds",
            description="Monotonicity bounds (gamma, L) of the bundled B-H curve",
            mimeType="text/plain",
        ),
        ResourceTemplate(
            uriTemplate="study://cell/{cell_id}",
            name="Cell Detail",
            description="Recorded outcome of a single study cell",
            mimeType="text/plain",
        ),
    ]


def handle_study_summary(db) -> str:
    rows = db._execute_query("""
        SELECT study_name, method, COUNT(*) AS cells,
               MIN(iterations) AS min_iterations, MAX(iterations) AS max_iterations,
               SUM(CASE WHEN terminated IN ('converged', 'zero_direction') THEN 1 ELSE 0 END) AS converged,
               MAX(last_modified) AS last_updated
        FROM study_cells
        GROUP BY study_name, method
        ORDER BY study_name, method
    """)
    if not rows:
        return "No study cells recorded."

    resource_text = "# Study Summary\n\n"
    resource_text += "| Study | Method | Cells | Converged | Iterations | Last Updated |\n"
    resource_text += "|-------|--------|-------|-----------|------------|--------------|\n"
    for row in rows:
        resource_text += f"| {row['study_name']} | {row['method']} | {row['cells']} | {row['converged']} | "
        resource_text += f"{row['min_iterations']}-{row['max_iterations']} | {row['last_updated'] or 'Never'} |\n"
    return resource_text


def handle_cell_detail(db, cell_id: str) -> str:
    rows = db._execute_query("SELECT * FROM study_cells WHERE cell_id = ? ORDER BY study_name", [cell_id])
    if not rows:
        raise ValueError(f"Cell not found: {cell_id}")

    resource_text = f"# Cell {cell_id}\n"
    for row in rows:
        resource_text += f"\n## Study {row['study_name']}\n\n"
        resource_text += f"**Method:** {row['method']}\n"
        resource_text += f"**Mesh level / order:** h={row['h_level']} p={row['p']}\n"
        resource_text += f"**Dofs:** {row['dofs']}\n"
        resource_text += f"**Iterations:** {row['iterations']} ({row['terminated']})\n"
        if row['final_energy'] is not None:
            resource_text += f"**Final energy:** {row['final_energy']!r}\n"
        if row['certificate']:
            resource_text += f"**Certificate:** {row['certificate']}\n"
        if row['error']:
            resource_text += f"**Error:** {row['error']}\n"
        resource_text += f"**Wall time:** {row['wall_time']:.3f}s\n"
        resource_text += f"**Recorded:** {row['created']} (last modified {row['last_modified']})\n"
    return resource_text


def handle_material_bounds(name: str) -> str:
    if name != "bundled":
        raise ValueError(f"Unknown material: {name}")
    law = spline_law_from_csv()
    gamma, L = estimate_bounds(law, DEFAULT_S_MAX)
    resource_text = "# Bundled B-H curve\n\n"
    resource_text += f"**File:** {bundled_bh_curve()}\n"
    resource_text += f"**Sampled range:** |b| <= {DEFAULT_S_MAX} T\n"
    resource_text += f"**gamma:** {gamma!r}\n"
    resource_text += f"**L:** {L!r}\n"
    resource_text += f"**Saturation slope:** {law.spline.nu_sat!r}\n"
    return resource_text


def handle_read_resource(db, uri: AnyUrl) -> str:
    """Handle resource reading requests"""
    logger.debug(f"Handling read_resource request for URI: {uri}")
    uri_str = str(uri)

    if uri.scheme == "study":
        path = uri_str.replace("study://", "")
        if path == "summary/all":
            return handle_study_summary(db)
        if path.startswith("cell/"):
            return handle_cell_detail(db, path.replace("cell/", ""))

    elif uri.scheme == "material":
        path = uri_str.replace("material://", "")
        if path.startswith("bounds/"):
            return handle_material_bounds(path.replace("bounds/", ""))

    raise ValueError(f"Unsupported resource URI: {uri_str}")
