"""
Structured triangular meshes over a rectangular multi-region domain.

The domain is an air box [0, width] x [0, height] containing axis-aligned
rectangles (iron limbs, coils).  Meshes are generated on a coarse grid that is
aligned with every rectangle edge and then refined uniformly, so that the
refinement level k corresponds to the meshsize h = 2^-k.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .errors import ConfigurationError, ExportError, UsageError

logger = logging.getLogger('mcp_magnetostatics_server.mesh')

RegionId = int

AIR: RegionId = 0
IRON: RegionId = 1
COIL_POSITIVE: RegionId = 2
COIL_NEGATIVE: RegionId = 3

_ALIGN_TOL = 1e-9


class RectRegion(BaseModel):
    """Axis-aligned rectangle carrying a region label"""
    name: str
    region_id: int = Field(ge=0)
    x0: float
    y0: float
    x1: float
    y1: float

    @model_validator(mode="after")
    def _check_extent(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"rectangle {self.name} has non-positive extent")
        return self

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains_points(self, pts: np.ndarray) -> np.ndarray:
        return ((pts[:, 0] > self.x0) & (pts[:, 0] < self.x1)
                & (pts[:, 1] > self.y0) & (pts[:, 1] < self.y1))


class GeometrySpec(BaseModel):
    """Air box with nested rectangular subregions"""
    width: float = Field(default=1.0, gt=0)
    height: float = Field(default=1.0, gt=0)
    base_divisions: int = Field(default=8, ge=1)
    background_region: int = Field(default=AIR, ge=0)
    regions: list[RectRegion] = Field(default_factory=list)

    def region_ids(self) -> list[int]:
        ids = {self.background_region}
        ids.update(r.region_id for r in self.regions)
        return sorted(ids)


def benchmark_geometry() -> GeometrySpec:
    """
    Stand-in for the benchmark geometry: a unit-square air box with a C-shaped
    iron core (three rectangles, open towards +x) and two coils on either side
    of the back limb carrying opposite currents.  All edges lie on the 1/8 grid.
    """
    return GeometrySpec(
        width=1.0,
        height=1.0,
        base_divisions=8,
        background_region=AIR,
        regions=[
            RectRegion(name="iron_top", region_id=IRON, x0=0.25, y0=0.625, x1=0.75, y1=0.75),
            RectRegion(name="iron_back", region_id=IRON, x0=0.25, y0=0.375, x1=0.375, y1=0.625),
            RectRegion(name="iron_bottom", region_id=IRON, x0=0.25, y0=0.25, x1=0.75, y1=0.375),
            RectRegion(name="coil_plus", region_id=COIL_POSITIVE, x0=0.125, y0=0.375, x1=0.25, y1=0.625),
            RectRegion(name="coil_minus", region_id=COIL_NEGATIVE, x0=0.375, y0=0.375, x1=0.5, y1=0.625),
        ],
    )


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable conforming triangulation with one region label per triangle"""
    nodes: np.ndarray
    triangles: np.ndarray
    region: np.ndarray
    boundary_nodes: np.ndarray
    h_level: int
    parents: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        for arr in (self.nodes, self.triangles, self.region, self.boundary_nodes):
            arr.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def num_triangles(self) -> int:
        return int(self.triangles.shape[0])

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Unique edges of the mesh.

        Returns (edges, tri_edges, counts): edges as sorted node pairs (E, 2),
        tri_edges (T, 3) where local edge i joins local vertices (i, i+1 mod 3),
        and counts (E,) the number of triangles sharing each edge.
        """
        return _unique_edges(self.triangles)

    def max_diameter(self) -> float:
        p = self.nodes[self.triangles]
        lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        return float(lengths.max())


def _unique_edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    local = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 3, 2)
    all_edges = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(all_edges, axis=0, return_inverse=True, return_counts=True)
    return edges, inverse.reshape(-1, 3), counts


def _boundary_nodes(triangles: np.ndarray) -> np.ndarray:
    edges, _, counts = _unique_edges(triangles)
    return np.unique(edges[counts == 1])


def validate_geometry(geometry: GeometrySpec) -> None:
    """Check that all rectangles lie in the box and are disjoint or nested"""
    violations = []
    for r in geometry.regions:
        if r.x0 < -_ALIGN_TOL or r.y0 < -_ALIGN_TOL or r.x1 > geometry.width + _ALIGN_TOL \
                or r.y1 > geometry.height + _ALIGN_TOL:
            violations.append(f"rectangle {r.name} leaves the domain box")

    def inside(a: RectRegion, b: RectRegion) -> bool:
        return (a.x0 >= b.x0 - _ALIGN_TOL and a.x1 <= b.x1 + _ALIGN_TOL
                and a.y0 >= b.y0 - _ALIGN_TOL and a.y1 <= b.y1 + _ALIGN_TOL)

    rects = geometry.regions
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            a, b = rects[i], rects[j]
            overlap_x = min(a.x1, b.x1) - max(a.x0, b.x0)
            overlap_y = min(a.y1, b.y1) - max(a.y0, b.y0)
            if overlap_x > _ALIGN_TOL and overlap_y > _ALIGN_TOL and not (inside(a, b) or inside(b, a)):
                violations.append(f"rectangles {a.name} and {b.name} overlap without nesting")
    if violations:
        raise ConfigurationError(violations)


def _check_alignment(geometry: GeometrySpec, divisions: int) -> None:
    dx = geometry.width / divisions
    dy = geometry.height / divisions
    violations = []
    for r in geometry.regions:
        for value, step, label in ((r.x0, dx, "x0"), (r.x1, dx, "x1"), (r.y0, dy, "y0"), (r.y1, dy, "y1")):
            ratio = value / step
            if abs(ratio - round(ratio)) > 1e-6:
                violations.append(f"rectangle {r.name}: {label}={value} is not aligned with a "
                                  f"{divisions}x{divisions} grid")
    if violations:
        raise ConfigurationError(violations)


def structured_mesh(width: float, height: float, divisions: int) -> TriMesh:
    """Uniform divisions x divisions grid, each cell split along its rising diagonal"""
    if divisions < 1:
        raise UsageError("divisions must be positive")
    xs = np.linspace(0.0, width, divisions + 1)
    ys = np.linspace(0.0, height, divisions + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(divisions), np.arange(divisions))
    n00 = (j * (divisions + 1) + i).ravel()
    n10 = n00 + 1
    n01 = n00 + divisions + 1
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)

    return TriMesh(
        nodes=nodes,
        triangles=triangles.astype(np.int64),
        region=np.zeros(triangles.shape[0], dtype=np.int64),
        boundary_nodes=_boundary_nodes(triangles),
        h_level=0,
    )


def classify_regions(mesh: TriMesh, geometry: GeometrySpec) -> TriMesh:
    """Relabel every triangle by the innermost rectangle containing its centroid"""
    centroids = mesh.centroids()
    region = np.full(mesh.num_triangles, geometry.background_region, dtype=np.int64)
    best_area = np.full(mesh.num_triangles, np.inf)
    for rect in geometry.regions:
        hit = rect.contains_points(centroids) & (rect.area < best_area)
        region[hit] = rect.region_id
        best_area[hit] = rect.area
    return TriMesh(
        nodes=mesh.nodes,
        triangles=mesh.triangles,
        region=region,
        boundary_nodes=mesh.boundary_nodes,
        h_level=mesh.h_level,
        parents=mesh.parents,
    )


def generate_benchmark_mesh(h_level: int, geometry: Optional[GeometrySpec] = None) -> TriMesh:
    """
    Mesh the geometry at refinement level h_level.

    The base grid has geometry.base_divisions cells per axis; h_level uniform
    refinements follow.  Rectangles must align with the final grid.
    """
    if geometry is None:
        geometry = benchmark_geometry()
    if h_level < 0:
        raise UsageError(f"h_level must be non-negative, got {h_level}")
    validate_geometry(geometry)
    _check_alignment(geometry, geometry.base_divisions * 2 ** h_level)

    mesh = structured_mesh(geometry.width, geometry.height, geometry.base_divisions)
    for _ in range(h_level):
        mesh = refine_uniform(mesh)
    mesh = classify_regions(mesh, geometry)
    logger.info(f"Generated mesh h_level={h_level}: {mesh.num_triangles} triangles, {mesh.num_nodes} nodes")
    return mesh


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """
    Split each triangle into 4 congruent children through its edge midpoints.

    Children of triangle t are stored at indices 4t .. 4t+3 and inherit its region;
    the corner children keep the parent's vertex order so all stay counter-clockwise.
    """
    edges, tri_edges, _ = mesh.edges()
    midpoints = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    nodes = np.vstack([mesh.nodes, midpoints])

    v0, v1, v2 = mesh.triangles.T
    m01, m12, m20 = (mesh.num_nodes + tri_edges).T
    children = np.stack([
        np.column_stack([v0, m01, m20]),
        np.column_stack([m01, v1, m12]),
        np.column_stack([m20, m12, v2]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)

    logger.debug(f"Refined mesh to {children.shape[0]} triangles")
    return TriMesh(
        nodes=nodes,
        triangles=children.astype(np.int64),
        region=np.repeat(mesh.region, 4),
        boundary_nodes=_boundary_nodes(children),
        h_level=mesh.h_level + 1,
        parents=np.repeat(np.arange(mesh.num_triangles), 4),
    )


def locate_region(mesh: TriMesh, tri_index: int) -> RegionId:
    """Region label stored for a triangle"""
    if not 0 <= tri_index < mesh.num_triangles:
        raise UsageError(f"triangle index {tri_index} out of range [0, {mesh.num_triangles})")
    return int(mesh.region[tri_index])


def write_mesh_text(mesh: TriMesh, path: str | Path) -> Path:
    """Write plain-text node, element and region lists"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            f.write(f"# h_level {mesh.h_level}\n")
            f.write(f"NODES {mesh.num_nodes}\n")
            for x, y in mesh.nodes:
                f.write(f"{x:.17g} {y:.17g}\n")
            f.write(f"ELEMENTS {mesh.num_triangles}\n")
            for (a, b, c), r in zip(mesh.triangles, mesh.region):
                f.write(f"{a} {b} {c} {r}\n")
            f.write(f"BOUNDARY {mesh.boundary_nodes.size}\n")
            f.write(" ".join(str(n) for n in mesh.boundary_nodes) + "\n")
    except OSError as e:
        raise ExportError(f"Could not write mesh file {path}: {e}") from e
    return path
