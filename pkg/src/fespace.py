# src/fespace.py
"""
Continuous Lagrange spaces V_h^p on triangulations, basis derivative tables to
order 3, inflow constraints, inverse-inequality constants and the projections
pi (L2) and pi-hat (A-orthogonal).
"""
import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from src.linalg import eigen_largest_generalized, factorize
from src.logger import log_debug
from src.mesh import BoundaryClass, Mesh
from src.quadrature import RHS_DEGREE, edge_rule, triangle_rule

MAX_DERIVATIVE_ORDER = 3
REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

DerivativeKey = Tuple[int, int]


def derivative_keys(max_order: int):
    return [(a, r - a) for r in range(max_order + 1) for a in range(r, -1, -1)]


@dataclass(frozen=True)
class ScalarField:
    """A closure pair: values and (optionally) gradients at physical points."""

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gradient: Optional[Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]] = None

    def __call__(self, x, y):
        return self.value(x, y)


def _falling(n: int, k: int) -> int:
    if k > n:
        return 0
    return factorial(n) // factorial(n - k)


class LagrangeBasis:
    """Nodal basis of P_p on the reference triangle with equispaced lattice nodes."""

    def __init__(self, p: int):
        if not 1 <= p <= 8:
            raise ValueError("Lagrange degree must lie in 1..8")
        self.p = p
        lattice = [(p - a - b, a, b) for b in range(p + 1) for a in range(p + 1 - b)]
        self.lattice = np.array(lattice, dtype=np.int64)
        self.nodes = self.lattice[:, 1:].astype(float) / p
        self.monomials = [(i, total - i) for total in range(p + 1) for i in range(total, -1, -1)]
        vandermonde = self._monomial_table(self.nodes, (0, 0)).T
        self.coefficients = np.linalg.inv(vandermonde)

    @property
    def n_local(self) -> int:
        return len(self.nodes)

    def _monomial_table(self, points, order):
        a, b = order
        x = points[:, 0]
        y = points[:, 1]
        table = np.zeros((len(self.monomials), len(points)))
        for k, (i, j) in enumerate(self.monomials):
            c = _falling(i, a) * _falling(j, b)
            if c:
                table[k] = c * x ** (i - a) * y ** (j - b)
        return table

    def tabulate(self, points, order: DerivativeKey = (0, 0)) -> np.ndarray:
        """Reference derivative d^(a,b) phi_i at `points`, shape (n_local, npts)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self.coefficients.T @ self._monomial_table(points, order)


@lru_cache(maxsize=None)
def lagrange_basis(p: int) -> LagrangeBasis:
    return LagrangeBasis(p)


def _physical_tables(ref: Dict[DerivativeKey, np.ndarray], inv_jac: np.ndarray,
                     keys) -> Dict[DerivativeKey, np.ndarray]:
    """
    Chain rule through the affine map: d/dx_k = sum_m G[m, k] d/dxi_m with
    G = J^{-1}. `ref` maps reference derivative keys to (nloc, npts) tables;
    the result maps physical keys to (nt, nloc, npts).
    """
    out = {}
    for a, b in keys:
        directions = [0] * a + [1] * b
        total = None
        for combo in itertools.product((0, 1), repeat=len(directions)):
            coef = np.ones(inv_jac.shape[0])
            for m, k in zip(combo, directions):
                coef = coef * inv_jac[:, m, k]
            ref_key = (combo.count(0), combo.count(1))
            term = coef[:, None, None] * ref[ref_key][None]
            total = term if total is None else total + term
        out[(a, b)] = total
    return out


@dataclass
class VolumeTables:
    points: np.ndarray                       # (nt, nq, 2) physical
    weights: np.ndarray                      # (nt, nq) quadrature weight * |det J|
    phi: Dict[DerivativeKey, np.ndarray]     # (nt, nloc, nq)
    max_order: int


@dataclass
class FacetTables:
    """Per element and local edge: quadrature on the three edges of every triangle."""

    points: np.ndarray                       # (nt, 3, nqe, 2)
    weights: np.ndarray                      # (nt, 3, nqe) weight * edge length
    normals: np.ndarray                      # (nt, 3, 2) element-outward
    phi: Dict[DerivativeKey, np.ndarray]     # (nt, 3, nloc, nqe)
    outflow_boundary: np.ndarray             # (nt, 3) bool: edge lies on the outflow boundary


class FESpace:
    """
    Degree-p continuous Lagrange space. Global numbering: mesh vertices first,
    then p-1 dofs per edge (ordered from the lower vertex id), then element
    interiors.
    """

    def __init__(self, mesh: Mesh, p: int):
        self.mesh = mesh
        self.p = int(p)
        self.basis = lagrange_basis(self.p)
        self._volume_cache: Dict[int, VolumeTables] = {}
        self._facet_cache: Dict[int, FacetTables] = {}
        self._matrix_cache: Dict[str, sp.csr_matrix] = {}
        self._build_dofs()

    # -- dof management -------------------------------------------------
    def _build_dofs(self):
        mesh, p = self.mesh, self.p
        lattice = self.basis.lattice
        nv, ne, nt = mesh.n_vertices, mesh.n_edges, mesh.n_elements
        interior_local = [l for l, bary in enumerate(lattice) if np.all(bary > 0)]
        n_int = len(interior_local)
        interior_index = {l: k for k, l in enumerate(interior_local)}

        dofs = np.empty((nt, len(lattice)), dtype=np.int64)
        tri = mesh.triangles
        for l, bary in enumerate(lattice):
            vertex = np.flatnonzero(bary == p)
            if len(vertex):
                dofs[:, l] = tri[:, vertex[0]]
                continue
            zeros = np.flatnonzero(bary == 0)
            if len(zeros):
                i = zeros[0]
                a, b = (i + 1) % 3, (i + 2) % 3
                step = np.where(tri[:, a] < tri[:, b], bary[b], bary[a])
                dofs[:, l] = nv + mesh.element_edges[:, i] * (p - 1) + (step - 1)
                continue
            dofs[:, l] = nv + ne * (p - 1) + np.arange(nt) * n_int + interior_index[l]

        self.element_dofs = dofs
        self.n_dofs = nv + ne * (p - 1) + nt * n_int

        coords = np.empty((self.n_dofs, 2))
        ref = self.basis.nodes
        for e0 in range(0, nt, 4096):
            sl = slice(e0, min(nt, e0 + 4096))
            phys = mesh.vertices[tri[sl, 0]][:, None, :] + np.einsum("eij,lj->eli", mesh.jacobians[sl], ref)
            coords[dofs[sl]] = phys
        self.node_coords = coords

        inflow_edges = mesh.edges_of_class(BoundaryClass.INFLOW)
        constrained = set(mesh.edges[inflow_edges].ravel().tolist())
        for e in inflow_edges:
            constrained.update(range(nv + e * (p - 1), nv + (e + 1) * (p - 1)))
        self.constrained_dofs = np.array(sorted(constrained), dtype=np.int64)
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained_dofs] = False
        self.free_dofs = np.flatnonzero(mask)
        log_debug(f"FESpace p={p}: {self.n_dofs} dofs, {len(self.constrained_dofs)} constrained")

    @property
    def n_local(self) -> int:
        return self.basis.n_local

    def interpolate(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        x, y = self.node_coords[:, 0], self.node_coords[:, 1]
        return np.broadcast_to(np.asarray(fn(x, y), dtype=float), (self.n_dofs,)).copy()

    def constraint_values(self, fn) -> np.ndarray:
        pts = self.node_coords[self.constrained_dofs]
        return np.broadcast_to(np.asarray(fn(pts[:, 0], pts[:, 1]), dtype=float),
                               (len(self.constrained_dofs),)).copy()

    # -- tables ------------------------------------------------------------
    def volume_tables(self, degree: int, max_order: int = 1) -> VolumeTables:
        if max_order > MAX_DERIVATIVE_ORDER:
            raise ValueError("derivative order above 3 is not tabulated")
        cached = self._volume_cache.get(degree)
        if cached is not None and cached.max_order >= max_order:
            return cached
        tables = self._volume_tables(degree, max_order, slice(None))
        self._volume_cache[degree] = tables
        log_debug(f"volume tables: degree {degree}, order {max_order}, {tables.weights.shape[1]} points")
        return tables

    def volume_chunks(self, degree: int, max_order: int, chunk: int = 2048):
        """Uncached tables in element blocks: yields (element slice, VolumeTables)."""
        if max_order > MAX_DERIVATIVE_ORDER:
            raise ValueError("derivative order above 3 is not tabulated")
        nt = self.mesh.n_elements
        for start in range(0, nt, chunk):
            sl = slice(start, min(nt, start + chunk))
            yield sl, self._volume_tables(degree, max_order, sl)

    def _volume_tables(self, degree: int, max_order: int, sl: slice) -> VolumeTables:
        mesh = self.mesh
        rule = triangle_rule(degree)
        keys = derivative_keys(max_order)
        ref = {k: self.basis.tabulate(rule.points, k) for k in keys}
        jac = mesh.jacobians[sl]
        points = mesh.vertices[mesh.triangles[sl, 0]][:, None, :] + np.einsum("eij,qj->eqi", jac, rule.points)
        weights = 2.0 * mesh.areas[sl, None] * rule.weights[None, :]
        return VolumeTables(points=points, weights=weights,
                            phi=_physical_tables(ref, np.linalg.inv(jac), keys), max_order=max_order)

    def facet_tables(self, degree: int) -> FacetTables:
        cached = self._facet_cache.get(degree)
        if cached is not None:
            return cached
        mesh = self.mesh
        rule = edge_rule(degree)
        s = rule.points[:, 0]
        keys = derivative_keys(1)
        inv_jac = np.linalg.inv(mesh.jacobians)
        nt = mesh.n_elements
        per_edge = []
        for i in range(3):
            a, b = REFERENCE_VERTICES[(i + 1) % 3], REFERENCE_VERTICES[(i + 2) % 3]
            ref_pts = a[None, :] + s[:, None] * (b - a)[None, :]
            ref = {k: self.basis.tabulate(ref_pts, k) for k in keys}
            per_edge.append((ref_pts, _physical_tables(ref, inv_jac, keys)))
        points = np.stack([
            mesh.vertices[mesh.triangles[:, 0]][:, None, :] + np.einsum("eij,qj->eqi", mesh.jacobians, ref_pts)
            for ref_pts, _ in per_edge
        ], axis=1)
        phi = {k: np.stack([tabs[k] for _, tabs in per_edge], axis=1) for k in keys}
        lengths = mesh.edge_lengths[mesh.element_edges]
        weights = lengths[:, :, None] * rule.weights[None, None, :]
        outflow = mesh.boundary_class[mesh.element_edges] == int(BoundaryClass.OUTFLOW)
        tables = FacetTables(points=points, weights=weights, normals=mesh.element_normals,
                             phi=phi, outflow_boundary=outflow.reshape(nt, 3))
        self._facet_cache[degree] = tables
        return tables

    # -- assembly helpers --------------------------------------------------
    def scatter(self, local: np.ndarray) -> sp.csr_matrix:
        """Sum element matrices local[e, i, j] (row = test i, col = trial j) into CSR."""
        dofs = self.element_dofs
        nloc = dofs.shape[1]
        rows = np.repeat(dofs, nloc, axis=1).ravel()
        cols = np.tile(dofs, (1, nloc)).ravel()
        mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs))
        mat = mat.tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        return mat

    def scatter_vector(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.element_dofs.ravel(), weights=local.ravel(), minlength=self.n_dofs)

    def mass_matrix(self) -> sp.csr_matrix:
        if "mass" not in self._matrix_cache:
            t = self.volume_tables(2 * self.p + 1, 0)
            phi = t.phi[(0, 0)]
            self._matrix_cache["mass"] = self.scatter(np.einsum("eq,eiq,ejq->eij", t.weights, phi, phi))
        return self._matrix_cache["mass"]

    def stiffness_matrix(self) -> sp.csr_matrix:
        if "stiffness" not in self._matrix_cache:
            t = self.volume_tables(2 * self.p + 1, 1)
            local = sum(np.einsum("eq,eiq,ejq->eij", t.weights, t.phi[k], t.phi[k]) for k in ((1, 0), (0, 1)))
            self._matrix_cache["stiffness"] = self.scatter(local)
        return self._matrix_cache["stiffness"]

    def a_matrix(self, A: Optional[np.ndarray]) -> sp.csr_matrix:
        """Gram matrix of <w, v>_A = (w, v) + (grad w, A grad v), A given per element (nt, 2, 2)."""
        if A is None:
            return self.mass_matrix()
        t = self.volume_tables(2 * self.p + 1, 1)
        gx, gy = t.phi[(1, 0)], t.phi[(0, 1)]
        wa = t.weights * A[:, 0, 0][:, None]
        wb = t.weights * A[:, 0, 1][:, None]
        wc = t.weights * A[:, 1, 1][:, None]
        local = (np.einsum("eq,eiq,ejq->eij", wa, gx, gx)
                 + np.einsum("eq,eiq,ejq->eij", wb, gx, gy)
                 + np.einsum("eq,eiq,ejq->eij", wb, gy, gx)
                 + np.einsum("eq,eiq,ejq->eij", wc, gy, gy))
        return self.mass_matrix() + self.scatter(local)

    def a_load(self, u, A: Optional[np.ndarray], degree: int = RHS_DEGREE) -> np.ndarray:
        """Vector <u, phi_i>_A by quadrature; needs u.gradient when A is given."""
        t = self.volume_tables(degree, 1)
        x, y = t.points[..., 0], t.points[..., 1]
        value = np.broadcast_to(np.asarray(_value_of(u)(x, y), dtype=float), x.shape)
        local = np.einsum("eq,eiq->ei", t.weights * value, t.phi[(0, 0)])
        if A is not None:
            if getattr(u, "gradient", None) is None:
                raise ValueError("A-weighted loads need the gradient of the field")
            ux, uy = u.gradient(x, y)
            ux = np.broadcast_to(ux, x.shape)
            uy = np.broadcast_to(uy, x.shape)
            ax = A[:, 0, 0][:, None] * ux + A[:, 0, 1][:, None] * uy
            ay = A[:, 1, 0][:, None] * ux + A[:, 1, 1][:, None] * uy
            local += np.einsum("eq,eiq->ei", t.weights * ax, t.phi[(1, 0)])
            local += np.einsum("eq,eiq->ei", t.weights * ay, t.phi[(0, 1)])
        return self.scatter_vector(local)


def _value_of(u):
    if isinstance(u, ScalarField):
        return u.value
    if callable(u):
        return u
    raise TypeError("expected a ScalarField or a callable f(x, y)")


class Projector:
    """
    Repeated projections onto V_h sharing one factorisation. With A=None this
    is pi (L2), otherwise pi-hat for <.,.>_A. When `constrained`, inflow dofs
    are fixed to the supplied boundary values (zero by default) and the
    projection is taken over the remaining dofs.
    """

    def __init__(self, space: FESpace, A: Optional[np.ndarray] = None, constrained: bool = False,
                 degree: int = RHS_DEGREE):
        if degree < 2 * space.p + 3:
            raise ValueError("projection quadrature must be exact to degree 2p+3")
        self.space = space
        self.A = A
        self.degree = degree
        self.constrained = constrained and len(space.constrained_dofs) > 0
        self.matrix = space.a_matrix(A)
        if self.constrained:
            free, con = space.free_dofs, space.constrained_dofs
            self._coupling = self.matrix[free][:, con]
            self._solve = factorize(self.matrix[free][:, free])
        else:
            self._solve = factorize(self.matrix)

    def load(self, u) -> np.ndarray:
        return self.space.a_load(u, self.A, self.degree)

    def solve(self, rhs: np.ndarray, boundary: Optional[np.ndarray] = None) -> np.ndarray:
        if not self.constrained:
            return self._solve(rhs)
        space = self.space
        x = np.zeros(space.n_dofs)
        if boundary is not None:
            x[space.constrained_dofs] = boundary
        free = space.free_dofs
        x[free] = self._solve(rhs[free] - self._coupling @ x[space.constrained_dofs])
        return x

    def __call__(self, u, boundary: Optional[np.ndarray] = None) -> np.ndarray:
        return self.solve(self.load(u), boundary)


def l2_project(space: FESpace, u, boundary: Optional[np.ndarray] = None,
               degree: int = RHS_DEGREE) -> np.ndarray:
    """Orthogonal L2 projection pi u; `boundary` fixes the inflow dofs."""
    return Projector(space, None, boundary is not None, degree)(u, boundary)


def a_project(space: FESpace, u, stab=None, boundary: Optional[np.ndarray] = None,
              degree: int = RHS_DEGREE) -> np.ndarray:
    """A-orthogonal projection pi-hat u; with stab=None the A-part vanishes."""
    A = stab.A if stab is not None else None
    return Projector(space, A, boundary is not None, degree)(u, boundary)


def eval_field(space: FESpace, coefficients: np.ndarray, element: int, ref_point,
               order: DerivativeKey = (0, 0)) -> float:
    """Physical derivative d^(a,b) of the discrete field at a reference point of `element`."""
    a, b = order
    if a < 0 or b < 0 or a + b > MAX_DERIVATIVE_ORDER:
        raise ValueError(f"derivative order {order} outside 0..{MAX_DERIVATIVE_ORDER}")
    if not 0 <= element < space.mesh.n_elements:
        raise IndexError(f"invalid element {element}")
    pt = np.asarray(ref_point, dtype=float).reshape(1, 2)
    ref = {k: space.basis.tabulate(pt, k) for k in derivative_keys(a + b) if sum(k) == a + b}
    inv_jac = np.linalg.inv(space.mesh.jacobians[element:element + 1])
    table = _physical_tables(ref, inv_jac, [order])[order][0, :, 0]
    return float(table @ coefficients[space.element_dofs[element]])


# ---------------------------------------------------------------------------
# inverse inequality constants

@dataclass(frozen=True)
class InverseConstants:
    """Per-element C_INV (gradient) and C_inv (trace) constants for P_p."""

    grad: np.ndarray    # C_INV
    trace: np.ndarray   # C_inv
    p: int
    mode: str = "element"


def element_matrices(p: int, vertices: np.ndarray):
    """Dense mass, stiffness and boundary-mass matrices of P_p on one triangle."""
    vertices = np.asarray(vertices, dtype=float)
    jac = np.column_stack([vertices[1] - vertices[0], vertices[2] - vertices[0]])
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    scale = max(np.sum((vertices[1] - vertices[0]) ** 2), np.sum((vertices[2] - vertices[0]) ** 2))
    if abs(det) <= 1e-14 * scale:
        raise ValueError("degenerate triangle")
    basis = lagrange_basis(p)
    rule = triangle_rule(2 * p)
    inv_jac = np.linalg.inv(jac)[None]
    keys = derivative_keys(1)
    ref = {k: basis.tabulate(rule.points, k) for k in keys}
    tabs = _physical_tables(ref, inv_jac, keys)
    w = abs(det) * rule.weights
    phi = tabs[(0, 0)][0]
    mass = (phi * w) @ phi.T
    stiffness = sum((tabs[k][0] * w) @ tabs[k][0].T for k in ((1, 0), (0, 1)))

    erule = edge_rule(2 * p)
    s = erule.points[:, 0]
    boundary = np.zeros_like(mass)
    for i in range(3):
        a, b = REFERENCE_VERTICES[(i + 1) % 3], REFERENCE_VERTICES[(i + 2) % 3]
        pts = a[None, :] + s[:, None] * (b - a)[None, :]
        vals = basis.tabulate(pts)
        length = np.linalg.norm(vertices[(i + 2) % 3] - vertices[(i + 1) % 3])
        boundary += (vals * (length * erule.weights)) @ vals.T
    return mass, stiffness, boundary


def compute_inverse_constants(p: int, vertices: np.ndarray) -> Tuple[float, float]:
    """
    Sharp constants of ||grad v||_T <= C_INV p^2 h_T^-1 ||v||_T and
    ||v||_dT <= C_inv p h_T^-1/2 ||v||_T over P_p(T).
    """
    vertices = np.asarray(vertices, dtype=float)
    mass, stiffness, boundary = element_matrices(p, vertices)
    h = max(np.linalg.norm(vertices[i] - vertices[j]) for i, j in ((0, 1), (1, 2), (2, 0)))
    lam_grad = eigen_largest_generalized(stiffness, mass)
    lam_trace = eigen_largest_generalized(boundary, mass)
    return h / p ** 2 * np.sqrt(lam_grad), np.sqrt(h) / p * np.sqrt(lam_trace)


def inverse_constants(space: FESpace, mode: str = "element") -> InverseConstants:
    """
    Constants for every element. Congruent and similar triangles share their
    constants, so values are cached per normalised side-length triple.
    `mode="global"` replaces them by the mesh-wide maxima.
    """
    if mode not in ("element", "global"):
        raise ValueError("mode must be 'element' or 'global'")
    mesh = space.mesh
    grad = np.empty(mesh.n_elements)
    trace = np.empty(mesh.n_elements)
    cache: Dict[tuple, Tuple[float, float]] = {}
    lengths = mesh.edge_lengths[mesh.element_edges]
    for e in range(mesh.n_elements):
        key = tuple(np.round(np.sort(lengths[e]) / lengths[e].max(), 12))
        if key not in cache:
            cache[key] = compute_inverse_constants(space.p, mesh.element_vertices(e))
        grad[e], trace[e] = cache[key]
    log_debug(f"inverse constants: {len(cache)} element class(es) for p={space.p}")
    if mode == "global":
        grad[:] = grad.max()
        trace[:] = trace.max()
    return InverseConstants(grad=grad, trace=trace, p=space.p, mode=mode)
