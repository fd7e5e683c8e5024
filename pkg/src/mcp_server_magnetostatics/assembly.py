"""
Lagrange finite element discretization of the vector-potential energy.

In two dimensions the potential a is scalar and b = curl a = (da/dy, -da/dx).
This module provides the P1/P2 dof maps, quadrature, and the assembled
quantities the descent iteration needs: the total energy, its gradient
(residual of the weak form) and the metric matrices of the update problem
for the fixed-point, Kacanov and Newton choices.

All element loops are vectorized over triangles and quadrature points.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Union

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .errors import ConfigurationError, UnsupportedMethodError, UsageError
from .material import MaterialLaw
from .mesh import TriMesh

logger = logging.getLogger('mcp_magnetostatics_server.assembly')

LINE_QUADRATURE_POINTS = 4


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Barycentric points and weights on the reference triangle (area 1/2)"""
    points: np.ndarray
    weights: np.ndarray
    degree: int


def quadrature_rule(degree: int) -> QuadratureRule:
    """Symmetric rule exact for polynomials of the given degree (2 or 4)"""
    if degree <= 2:
        a, b = 2.0 / 3.0, 1.0 / 6.0
        points = np.array([[a, b, b], [b, a, b], [b, b, a]])
        weights = np.full(3, 1.0 / 6.0)
        return QuadratureRule(points, weights, 2)
    if degree <= 4:
        a1, b1, w1 = 0.108103018168070, 0.445948490915965, 0.223381589678011
        a2, b2, w2 = 0.816847572980459, 0.091576213509771, 0.109951743655322
        points = np.array([
            [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
            [a2, b2, b2], [b2, a2, b2], [b2, b2, a2],
        ])
        weights = 0.5 * np.array([w1, w1, w1, w2, w2, w2])
        return QuadratureRule(points, weights, 4)
    raise UsageError(f"no quadrature rule of degree {degree}")


def reference_basis(order: int, bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Lagrange basis on the reference triangle at barycentric points (..., 3).

    Returns values (..., nloc) and derivatives with respect to the three
    barycentric coordinates (..., nloc, 3).  P2 dofs are ordered vertices first,
    then the midpoints of the local edges (0,1), (1,2), (2,0).
    """
    lam = np.asarray(bary, dtype=float)
    shape = lam.shape[:-1]
    if order == 1:
        values = lam.copy()
        derivs = np.broadcast_to(np.eye(3), shape + (3, 3)).copy()
        return values, derivs
    if order == 2:
        values = np.empty(shape + (6,))
        derivs = np.zeros(shape + (6, 3))
        for i in range(3):
            values[..., i] = lam[..., i] * (2.0 * lam[..., i] - 1.0)
            derivs[..., i, i] = 4.0 * lam[..., i] - 1.0
        for k in range(3):
            i, j = k, (k + 1) % 3
            values[..., 3 + k] = 4.0 * lam[..., i] * lam[..., j]
            derivs[..., 3 + k, i] = 4.0 * lam[..., j]
            derivs[..., 3 + k, j] = 4.0 * lam[..., i]
        return values, derivs
    raise UsageError(f"unsupported element order {order}; use 1 or 2")


@dataclass(frozen=True, eq=False)
class DofMap:
    """Global numbering of the Lagrange dofs and the homogeneous Dirichlet set"""
    order: int
    num_dofs: int
    cell_dofs: np.ndarray
    constrained: np.ndarray
    free: np.ndarray
    free_index: np.ndarray

    @property
    def num_free(self) -> int:
        return int(self.free.size)


def build_dofmap(mesh: TriMesh, order: int) -> tuple[DofMap, np.ndarray]:
    """Dof map and dof coordinates; P1 dofs are the nodes, P2 adds one dof per edge"""
    if order == 1:
        cell_dofs = mesh.triangles.copy()
        constrained = mesh.boundary_nodes.copy()
        coords = mesh.nodes.copy()
        num_dofs = mesh.num_nodes
    elif order == 2:
        edges, tri_edges, counts = mesh.edges()
        cell_dofs = np.hstack([mesh.triangles, mesh.num_nodes + tri_edges])
        boundary_edges = np.flatnonzero(counts == 1)
        constrained = np.union1d(mesh.boundary_nodes, mesh.num_nodes + boundary_edges)
        midpoints = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
        coords = np.vstack([mesh.nodes, midpoints])
        num_dofs = mesh.num_nodes + edges.shape[0]
    else:
        raise UsageError(f"unsupported element order {order}; use 1 or 2")

    free = np.setdiff1d(np.arange(num_dofs), constrained)
    free_index = np.full(num_dofs, -1, dtype=np.int64)
    free_index[free] = np.arange(free.size)
    dofmap = DofMap(order=order, num_dofs=int(num_dofs), cell_dofs=cell_dofs.astype(np.int64),
                    constrained=constrained.astype(np.int64), free=free, free_index=free_index)
    return dofmap, coords


class FunctionSpace:
    """
    P1 or P2 space on a TriMesh with a = 0 on the boundary.

    Precomputes the quadrature weights, physical quadrature points, basis values
    and basis curls for every triangle.
    """

    def __init__(self, mesh: TriMesh, order: int):
        self.mesh = mesh
        self.order = order
        self.dofmap, self.dof_coords = build_dofmap(mesh, order)
        self.quadrature = quadrature_rule(2 * order)

        p = mesh.nodes[mesh.triangles]
        self.grad_lambda, det = _barycentric_gradients(p)
        if np.any(det <= 0):
            raise UsageError("mesh contains triangles with non-positive area")
        self.weights = det[:, None] * self.quadrature.weights[None, :]
        self.quad_points = np.einsum('qk,tkd->tqd', self.quadrature.points, p)
        self.basis_values, dphi = reference_basis(order, self.quadrature.points)
        grads = np.einsum('qik,tkd->tqid', dphi, self.grad_lambda)
        self.basis_curls = _rotate(grads)

    @property
    def num_free(self) -> int:
        return self.dofmap.num_free

    def lift(self, coeffs: np.ndarray) -> np.ndarray:
        """Full dof vector from free-dof coefficients; full vectors pass through"""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape == (self.dofmap.num_dofs,):
            return coeffs
        if coeffs.shape != (self.dofmap.num_free,):
            raise UsageError(f"coefficient vector of length {coeffs.size} matches neither "
                             f"{self.dofmap.num_free} free nor {self.dofmap.num_dofs} total dofs")
        full = np.zeros(self.dofmap.num_dofs)
        full[self.dofmap.free] = coeffs
        return full

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float)[self.dofmap.free]

    def interpolate(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        """Nodal interpolant of fn(x, y) as a full dof vector"""
        x, y = self.dof_coords[:, 0], self.dof_coords[:, 1]
        return np.asarray(fn(x, y), dtype=float) * np.ones(self.dofmap.num_dofs)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.dofmap.num_free)


def _barycentric_gradients(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the barycentric coordinates (T, 3, 2) and the Jacobian determinants"""
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
    g0 = -(g1 + g2)
    return np.stack([g0, g1, g2], axis=1), det


def _rotate(grads: np.ndarray) -> np.ndarray:
    """curl of a scalar field from its gradient: (d/dy, -d/dx)"""
    curls = np.empty_like(grads)
    curls[..., 0] = grads[..., 1]
    curls[..., 1] = -grads[..., 0]
    return curls


@dataclass(frozen=True)
class SourceSpec:
    """Scalar current density j (A/m^2) per region; regions not listed carry no current"""
    current_density: Mapping[int, float] = field(default_factory=dict)

    def per_triangle(self, mesh: TriMesh) -> np.ndarray:
        j = np.zeros(mesh.num_triangles)
        for region_id, value in self.current_density.items():
            j[mesh.region == region_id] = value
        return j


@dataclass(frozen=True)
class FixedPoint:
    nu_bar: float
    name = "fixedpoint"


@dataclass(frozen=True)
class Kacanov:
    name = "kacanov"


@dataclass(frozen=True)
class Newton:
    name = "newton"


MetricChoice = Union[FixedPoint, Kacanov, Newton]


def metric_from_name(name: str, nu_bar: Optional[float] = None) -> MetricChoice:
    key = name.strip().lower().replace("-", "").replace("_", "")
    if key in ("fixedpoint", "fp"):
        if nu_bar is None or not nu_bar > 0:
            raise ConfigurationError("fixed-point iteration requires a positive nu_bar")
        return FixedPoint(float(nu_bar))
    if key == "kacanov":
        return Kacanov()
    if key == "newton":
        return Newton()
    raise ConfigurationError(f"unknown method {name!r}; choose fixedpoint, kacanov or newton")


def _check_laws(mesh: TriMesh, laws: Mapping[int, MaterialLaw]) -> None:
    missing = sorted(set(np.unique(mesh.region).tolist()) - set(laws))
    if missing:
        raise ConfigurationError([f"no material law assigned to region {r}" for r in missing])


def _region_masks(mesh: TriMesh, laws: Mapping[int, MaterialLaw]):
    _check_laws(mesh, laws)
    for region_id in np.unique(mesh.region):
        yield laws[int(region_id)], mesh.region == region_id


def curl_at_quadrature(space: FunctionSpace, coeffs: np.ndarray) -> np.ndarray:
    """b = curl a at every quadrature point, shape (T, Q, 2)"""
    values = space.lift(coeffs)
    local = values[space.dofmap.cell_dofs]
    return np.einsum('tqid,ti->tqd', space.basis_curls, local)


def eval_curl(space: FunctionSpace, coeffs: np.ndarray, tri_index: int, quad_point) -> np.ndarray:
    """
    Flux density of the FE function in one triangle.

    quad_point is either an index into the space's quadrature rule or a
    barycentric coordinate triple.
    """
    mesh = space.mesh
    if not 0 <= tri_index < mesh.num_triangles:
        raise UsageError(f"triangle index {tri_index} out of range")
    if np.ndim(quad_point) == 0:
        q = int(quad_point)
        if not 0 <= q < space.quadrature.points.shape[0]:
            raise UsageError(f"quadrature point {q} out of range")
        bary = space.quadrature.points[q]
    else:
        bary = np.asarray(quad_point, dtype=float)
    _, dphi = reference_basis(space.order, bary)
    grads = dphi @ space.grad_lambda[tri_index]
    local = space.lift(coeffs)[space.dofmap.cell_dofs[tri_index]]
    return _rotate(grads).T @ local


def curl_at_centroids(space: FunctionSpace, coeffs: np.ndarray) -> np.ndarray:
    """b at the centroid of every triangle, shape (T, 2)"""
    _, dphi = reference_basis(space.order, np.full(3, 1.0 / 3.0))
    curls = _rotate(np.einsum('ik,tkd->tid', dphi, space.grad_lambda))
    local = space.lift(coeffs)[space.dofmap.cell_dofs]
    return np.einsum('tid,ti->td', curls, local)


def _source_values(space: FunctionSpace, source: SourceSpec) -> np.ndarray:
    return source.per_triangle(space.mesh)


def load_vector(space: FunctionSpace, source: SourceSpec) -> np.ndarray:
    """<j, v> for every dof (full length)"""
    j = _source_values(space, source)
    local = np.einsum('t,tq,qi->ti', j, space.weights, space.basis_values)
    return np.bincount(space.dofmap.cell_dofs.ravel(), weights=local.ravel(),
                       minlength=space.dofmap.num_dofs)


def total_energy(space: FunctionSpace, coeffs: np.ndarray, laws: Mapping[int, MaterialLaw],
                 source: SourceSpec) -> float:
    """Phi(a) = int w(curl a) dx - int j a dx (J per unit depth)"""
    b = curl_at_quadrature(space, coeffs)
    density = np.empty(b.shape[:2])
    for law, mask in _region_masks(space.mesh, laws):
        density[mask] = law.energy_density(b[mask])
    values = space.lift(coeffs)
    a_q = np.einsum('qi,ti->tq', space.basis_values, values[space.dofmap.cell_dofs])
    j = _source_values(space, source)
    return float(np.sum(space.weights * density) - np.sum(space.weights * j[:, None] * a_q))


def field_at_quadrature(space: FunctionSpace, b: np.ndarray, laws: Mapping[int, MaterialLaw]) -> np.ndarray:
    h = np.empty_like(b)
    for law, mask in _region_masks(space.mesh, laws):
        h[mask] = law.field_intensity(b[mask])
    return h


def assemble_residual(space: FunctionSpace, coeffs: np.ndarray, laws: Mapping[int, MaterialLaw],
                      source: SourceSpec) -> np.ndarray:
    """Gradient of Phi over the free dofs: <dw/db(curl a), curl v> - <j, v>"""
    b = curl_at_quadrature(space, coeffs)
    h = field_at_quadrature(space, b, laws)
    local = np.einsum('tq,tqd,tqid->ti', space.weights, h, space.basis_curls)
    full = np.bincount(space.dofmap.cell_dofs.ravel(), weights=local.ravel(),
                       minlength=space.dofmap.num_dofs)
    full -= load_vector(space, source)
    return full[space.dofmap.free]


def energy_change(space: FunctionSpace, coeffs: np.ndarray, direction: np.ndarray, tau: float,
                  laws: Mapping[int, MaterialLaw], source: SourceSpec,
                  points: int = LINE_QUADRATURE_POINTS) -> float:
    """
    Phi(a + tau d) - Phi(a) as the integral of <dPhi(a + t d), d> over t in [0, tau].

    Gauss-Legendre in t; exact for linear laws.  Unlike the difference of two
    total energies it keeps its relative accuracy when the change is tiny.
    """
    b = curl_at_quadrature(space, coeffs)
    c = curl_at_quadrature(space, direction)
    nodes, weights = np.polynomial.legendre.leggauss(points)
    change = 0.0
    for t, wt in zip(0.5 * tau * (nodes + 1.0), 0.5 * tau * weights):
        h = field_at_quadrature(space, b + t * c, laws)
        change += wt * float(np.sum(space.weights * np.sum(h * c, axis=-1)))
    return change - tau * float(load_vector(space, source) @ space.lift(direction))


def metric_tensor(space: FunctionSpace, coeffs: Optional[np.ndarray], metric: MetricChoice,
                  laws: Mapping[int, MaterialLaw]) -> np.ndarray:
    """Generalized reluctivity nu^n at every quadrature point, shape (T, Q, 2, 2)"""
    T, Q = space.weights.shape
    if isinstance(metric, FixedPoint):
        return np.broadcast_to(metric.nu_bar * np.eye(2), (T, Q, 2, 2))
    if isinstance(metric, Kacanov):
        _check_laws(space.mesh, laws)
        for region_id in np.unique(space.mesh.region):
            if not laws[int(region_id)].isotropic:
                raise UnsupportedMethodError(
                    f"Kacanov iteration needs isotropic materials; region {int(region_id)} is not")
    b = curl_at_quadrature(space, coeffs)
    nu = np.empty((T, Q, 2, 2))
    for law, mask in _region_masks(space.mesh, laws):
        if isinstance(metric, Kacanov):
            chord = law.chord_reluctivity(np.linalg.norm(b[mask], axis=-1))
            nu[mask] = chord[..., None, None] * np.eye(2)
        elif isinstance(metric, Newton):
            nu[mask] = law.differential_reluctivity(b[mask])
        else:
            raise UsageError(f"unknown metric choice {metric!r}")
    return nu


def element_metric_matrices(space: FunctionSpace, coeffs: Optional[np.ndarray], metric: MetricChoice,
                            laws: Mapping[int, MaterialLaw]) -> np.ndarray:
    """Local matrices <nu curl phi_j, curl phi_i> per triangle, shape (T, nloc, nloc)"""
    nu = metric_tensor(space, coeffs, metric, laws)
    local = np.einsum('tq,tqia,tqab,tqjb->tij', space.weights, space.basis_curls, nu, space.basis_curls)
    return 0.5 * (local + np.swapaxes(local, 1, 2))


def assemble_free_matrix(space: FunctionSpace, local: np.ndarray) -> csr_matrix:
    """Scatter element matrices into a CSR matrix over the free dofs"""
    idx = space.dofmap.free_index[space.dofmap.cell_dofs]
    nloc = idx.shape[1]
    rows = np.repeat(idx, nloc, axis=1).ravel()
    cols = np.tile(idx, (1, nloc)).ravel()
    data = local.reshape(local.shape[0], -1).ravel()
    keep = (rows >= 0) & (cols >= 0)
    n = space.dofmap.num_free
    A = coo_matrix((data[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_metric(space: FunctionSpace, coeffs: Optional[np.ndarray], metric: MetricChoice,
                    laws: Mapping[int, MaterialLaw]) -> csr_matrix:
    """Matrix of the update problem <nu^n curl da, curl v> over the free dofs"""
    A = assemble_free_matrix(space, element_metric_matrices(space, coeffs, metric, laws))
    logger.debug(f"Assembled {metric.name} metric: n={A.shape[0]}, nnz={A.nnz}")
    return A


def stiffness_matrix(space: FunctionSpace) -> csr_matrix:
    """Unit-reluctivity stiffness matrix, the Gram matrix of the curl seminorm"""
    return assemble_metric(space, None, FixedPoint(1.0), {})


def curl_seminorm(space: FunctionSpace, coeffs: np.ndarray) -> float:
    """||curl a||_{L2}"""
    b = curl_at_quadrature(space, coeffs)
    return float(np.sqrt(np.sum(space.weights * np.sum(b * b, axis=-1))))


def prolongate(coarse: FunctionSpace, fine: FunctionSpace, coeffs: np.ndarray) -> np.ndarray:
    """
    Inject a coarse FE function into the once-refined space (full dof vector).

    Exact because the spaces are nested; every fine dof is evaluated in the
    parent triangle of a fine triangle containing it.
    """
    parents = fine.mesh.parents
    if parents is None or fine.mesh.h_level != coarse.mesh.h_level + 1 or fine.order != coarse.order:
        raise UsageError("fine space must come from one uniform refinement of the coarse space")
    values = coarse.lift(coeffs)
    p0 = coarse.mesh.nodes[coarse.mesh.triangles[parents, 0]]
    x = fine.dof_coords[fine.dofmap.cell_dofs]
    rel = x - p0[:, None, :]
    lam12 = np.einsum('tkd,tid->tik', coarse.grad_lambda[parents][:, 1:, :], rel)
    bary = np.concatenate([1.0 - lam12.sum(axis=-1, keepdims=True), lam12], axis=-1)
    phi, _ = reference_basis(coarse.order, bary)
    parent_values = values[coarse.dofmap.cell_dofs[parents]]
    local = np.einsum('tij,tj->ti', phi, parent_values)
    out = np.zeros(fine.dofmap.num_dofs)
    out[fine.dofmap.cell_dofs.ravel()] = local.ravel()
    return out


class MagnetostaticProblem:
    """
    Discrete problem: space, material laws per region and current sources.

    Counts metric assemblies per method so callers can check that the
    fixed-point matrix is built only once per run.
    """

    def __init__(self, space: FunctionSpace, laws: Mapping[int, MaterialLaw], source: SourceSpec):
        _check_laws(space.mesh, laws)
        self.space = space
        self.laws = dict(laws)
        self.source = source
        self.metric_assemblies: Counter = Counter()
        self._stiffness: Optional[csr_matrix] = None

    @property
    def num_free(self) -> int:
        return self.space.num_free

    def energy(self, coeffs: np.ndarray) -> float:
        return total_energy(self.space, coeffs, self.laws, self.source)

    def residual(self, coeffs: np.ndarray) -> np.ndarray:
        return assemble_residual(self.space, coeffs, self.laws, self.source)

    def energy_change(self, coeffs: np.ndarray, direction: np.ndarray, tau: float) -> float:
        return energy_change(self.space, coeffs, direction, tau, self.laws, self.source)

    def metric(self, coeffs: np.ndarray, choice: MetricChoice) -> csr_matrix:
        self.metric_assemblies[choice.name] += 1
        return assemble_metric(self.space, coeffs, choice, self.laws)

    def stiffness(self) -> csr_matrix:
        if self._stiffness is None:
            self._stiffness = stiffness_matrix(self.space)
        return self._stiffness
