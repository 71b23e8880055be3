# src/timeloop.py
"""
dG(q) time stepping. On every slab I_n = (t_{n-1}, t_n] the solution is a
degree-q polynomial in time with V_h coefficients, written in the
orthonormal Legendre basis phi_a(s) = sqrt(2a+1) P_a(2s-1), s in [0, 1].

With U = sum_b phi_b U_b and tests phi_a V, the slab operator is

    kron(D + E0, T) + kron(k I, K_gal + K_ss + K_hypo)
      + kron(D, K_ts) + kron(D'/k, K_tt) + kron(D^T, K_st)

with D[a, b] = int phi_b' phi_a, D'[a, b] = int phi_b' phi_a',
E0 = phi(0) phi(0)^T and T the time inner product (M_A or M).
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Protocol, Tuple

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre

from src.config import SolverOptions
from src.fespace import FESpace, Projector
from src.forms import RhsFunctional, SpatialOperators, apply_constraints
from src.linalg import LinearSolver, SolveReport
from src.logger import log_debug, log_info
from src.quadrature import gauss_interval

PROJECTION_POINTS = 12


@dataclass(frozen=True)
class TimePartition:
    breakpoints: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.breakpoints, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("a time partition needs at least two breakpoints")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", t)

    @classmethod
    def uniform(cls, t_final: float, k_target: float) -> "TimePartition":
        """N = ceil(t_f / k) equal steps, so k_n = t_f / N <= k."""
        if t_final <= 0 or k_target <= 0:
            raise ValueError("t_final and k must be positive")
        n = max(1, math.ceil(t_final / k_target - 1e-12))
        return cls(np.linspace(0.0, t_final, n + 1))

    @classmethod
    def single(cls, t_final: float) -> "TimePartition":
        return cls(np.array([0.0, float(t_final)]))

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def n_slabs(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def t_final(self) -> float:
        return float(self.breakpoints[-1])

    def slab(self, n: int) -> Tuple[float, float]:
        """(t_{n-1}, t_n) for n = 1..N."""
        if not 1 <= n <= self.n_slabs:
            raise IndexError(f"slab {n} outside 1..{self.n_slabs}")
        return float(self.breakpoints[n - 1]), float(self.breakpoints[n])


class DGTimeBasis:
    """Orthonormal Legendre basis of P_q on [0, 1] and its slab matrices."""

    def __init__(self, q: int):
        if q < 0:
            raise ValueError("q must be non-negative")
        self.q = int(q)
        s, w = gauss_interval(self.q + 2)
        phi, dphi = self.values(s), self.derivatives(s)
        self.mass = (phi * w) @ phi.T
        self.D = (phi * w) @ dphi.T
        self.DD = (dphi * w) @ dphi.T
        self.start = self.values(np.array([0.0]))[:, 0]
        self.end = self.values(np.array([1.0]))[:, 0]
        self.E0 = np.outer(self.start, self.start)

    @property
    def size(self) -> int:
        return self.q + 1

    def _scale(self):
        return np.sqrt(2.0 * np.arange(self.q + 1) + 1.0)

    def values(self, s) -> np.ndarray:
        """(q+1, npts)"""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return self._scale()[:, None] * legendre.legvander(2.0 * s - 1.0, self.q).T

    def derivatives(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros((self.q + 1, len(s)))
        for a in range(1, self.q + 1):
            coef = np.zeros(a + 1)
            coef[a] = 1.0
            out[a] = 2.0 * legendre.legval(2.0 * s - 1.0, legendre.legder(coef))
        return self._scale()[:, None] * out


@dataclass
class Slab:
    """One solved slab, handed to observers."""

    n: int
    t_start: float
    t_end: float
    coefficients: np.ndarray      # (q+1, n_dofs)
    previous: np.ndarray          # U(t_{n-1}^-)
    basis: DGTimeBasis
    report: Optional[SolveReport] = None

    @property
    def k(self) -> float:
        return self.t_end - self.t_start

    def at(self, s) -> np.ndarray:
        """U at reference times s in [0, 1], shape (npts, n_dofs)."""
        return self.basis.values(s).T @ self.coefficients

    def time_derivative(self, s) -> np.ndarray:
        return self.basis.derivatives(s).T @ self.coefficients / self.k

    @property
    def left(self) -> np.ndarray:
        """U(t_n^-)"""
        return self.basis.end @ self.coefficients

    @property
    def right(self) -> np.ndarray:
        """U(t_{n-1}^+)"""
        return self.basis.start @ self.coefficients


class SlabObserver(Protocol):
    def on_slab(self, slab: Slab) -> None:
        ...


@dataclass
class SpaceTimeSolution:
    partition: TimePartition
    q: int
    initial: np.ndarray                                 # U(t_0^-)
    endpoints: List[np.ndarray] = field(default_factory=list)     # U(t_n^-), n = 1..N
    blocks: Optional[List[np.ndarray]] = None           # kept when requested
    reports: List[SolveReport] = field(default_factory=list)

    @property
    def n_dofs(self) -> int:
        return len(self.initial)

    @property
    def total_dofs(self) -> int:
        """Number of space-time basis functions."""
        return (self.q + 1) * self.partition.n_slabs * self.n_dofs

    @property
    def final(self) -> np.ndarray:
        return self.endpoints[-1] if self.endpoints else self.initial

    @property
    def iterations(self) -> int:
        return int(sum(r.iterations for r in self.reports))

    def slab(self, n: int) -> Slab:
        if self.blocks is None:
            raise ValueError("slab blocks were not kept during the march")
        t0, t1 = self.partition.slab(n)
        previous = self.initial if n == 1 else self.endpoints[n - 2]
        return Slab(n, t0, t1, self.blocks[n - 1], previous, DGTimeBasis(self.q))


class SlabSystem:
    """
    Assembles and solves the slab equations of one method. The constrained
    operator and its solver are cached per step length.
    """

    def __init__(self, ops: SpatialOperators, q: int, rhs: Optional[RhsFunctional] = None,
                 inflow: Optional[Callable[[float], np.ndarray]] = None,
                 solver: Optional[SolverOptions] = None):
        self.ops = ops
        self.basis = DGTimeBasis(q)
        self.q = int(q)
        self.rhs = rhs
        self.inflow = inflow
        self.solver_options = solver or SolverOptions()
        self.space = ops.space
        self.n = ops.space.n_dofs
        con = ops.space.constrained_dofs
        self.constrained = (np.arange(self.q + 1)[:, None] * self.n + con[None, :]).ravel()
        self._cache: Dict[float, Tuple[sp.csr_matrix, sp.csr_matrix, LinearSolver]] = {}
        self._spatial = ops.spatial_form()

    def operator(self, k: float) -> sp.csr_matrix:
        b, ops = self.basis, self.ops
        kron = lambda t, m: sp.kron(sp.csr_matrix(t), m, format="csr")
        S = (kron(b.D + b.E0, ops.time_mass)
             + kron(k * b.mass, self._spatial)
             + kron(b.D, ops.K_ts)
             + kron(b.DD / k, ops.K_tt)
             + kron(b.D.T, ops.K_st))
        return S.tocsr()

    def _prepared(self, k: float):
        key = round(float(k), 14)
        if key not in self._cache:
            S = self.operator(k)
            zero = np.zeros(S.shape[0])
            constrained, _ = apply_constraints(S, zero, self.constrained, np.zeros(len(self.constrained)))
            self._cache[key] = (S, constrained, LinearSolver(constrained, self.solver_options))
            log_debug(f"slab operator for k={k:.6g}: size {S.shape[0]}, nnz {S.nnz}")
        return self._cache[key]

    def load(self, t0: float, k: float, previous: np.ndarray) -> np.ndarray:
        """Right-hand side of the slab equations before constraints."""
        b = self.basis
        out = np.outer(b.start, self.ops.time_mass @ previous)
        if self.rhs is not None and self.rhs.active:
            s, w = gauss_interval(max(self.q + 2, 6))
            phi, dphi = b.values(s), b.derivatives(s)
            for j in range(len(s)):
                main, with_vt = self.rhs(t0 + k * s[j])
                out += k * w[j] * np.outer(phi[:, j], main)
                out += w[j] * np.outer(dphi[:, j], with_vt)
        return out.ravel()

    def boundary_values(self, t0: float, k: float) -> np.ndarray:
        """Time-projected inflow data for every time coefficient."""
        n_con = len(self.space.constrained_dofs)
        if self.inflow is None or n_con == 0:
            return np.zeros((self.q + 1) * n_con)
        return time_project(self.inflow, t0, t0 + k, self.q).ravel()

    def system(self, t0: float, k: float, previous: np.ndarray):
        S, constrained, solver = self._prepared(k)
        values = self.boundary_values(t0, k)
        _, rhs = apply_constraints(S, self.load(t0, k, previous), self.constrained, values)
        return constrained, rhs, solver

    def solve(self, t0: float, k: float, previous: np.ndarray, guess: Optional[np.ndarray] = None):
        constrained, rhs, solver = self.system(t0, k, previous)
        x, report = solver.solve(rhs, x0=guess)
        return x.reshape(self.q + 1, self.n), report


def slab_residual(system: SlabSystem, slab: Slab) -> float:
    """Relative residual of the assembled slab equations at a computed block."""
    constrained, rhs, _ = system.system(slab.t_start, slab.k, slab.previous)
    r = constrained @ slab.coefficients.ravel() - rhs
    scale = np.linalg.norm(rhs)
    return float(np.linalg.norm(r) / scale) if scale > 0 else float(np.linalg.norm(r))


def march(ops: SpatialOperators, partition: TimePartition, q: int, initial: np.ndarray,
          rhs: Optional[RhsFunctional] = None,
          inflow: Optional[Callable[[float], np.ndarray]] = None,
          solver: Optional[SolverOptions] = None,
          observers: Iterable[SlabObserver] = (),
          keep_blocks: bool = True,
          system: Optional[SlabSystem] = None) -> SpaceTimeSolution:
    """
    Solve slab after slab from U(t_0^-) = `initial`. `inflow(t)` returns the
    values of the constrained dofs at time t. Observers see every slab.
    """
    system = system or SlabSystem(ops, q, rhs, inflow, solver)
    initial = np.asarray(initial, dtype=float)
    if initial.shape != (ops.space.n_dofs,):
        raise ValueError(f"initial state has shape {initial.shape}, expected ({ops.space.n_dofs},)")
    observers = list(observers)
    solution = SpaceTimeSolution(partition=partition, q=q, initial=initial,
                                 blocks=[] if keep_blocks else None)
    previous = initial
    guess = None
    every = max(1, partition.n_slabs // 10)
    for n in range(1, partition.n_slabs + 1):
        t0, t1 = partition.slab(n)
        coefficients, report = system.solve(t0, t1 - t0, previous, guess)
        slab = Slab(n, t0, t1, coefficients, previous, system.basis, report)
        for observer in observers:
            observer.on_slab(slab)
        if keep_blocks:
            solution.blocks.append(coefficients)
        solution.reports.append(report)
        previous = slab.left
        solution.endpoints.append(previous)
        guess = coefficients.ravel()
        if n % every == 0 or n == partition.n_slabs:
            log_info(f"slab {n}/{partition.n_slabs} t={t1:.4g} iters={report.iterations}")
    return solution


# ---------------------------------------------------------------------------
# projections in time

def time_project(v: Callable[[float], np.ndarray], t0: float, t1: float, q: int,
                 npts: int = PROJECTION_POINTS) -> np.ndarray:
    """
    P_q coefficients (orthonormal Legendre on the slab) of the projection
    that interpolates v at t1 and matches its moments against P_{q-1}.
    `v` may return arrays; the result has shape (q+1,) + v(t).shape.
    """
    basis = DGTimeBasis(q)
    k = t1 - t0
    end_value = np.asarray(v(t1), dtype=float)
    coefficients = np.zeros((q + 1,) + end_value.shape)
    if q > 0:
        s, w = gauss_interval(max(npts, q + 2))
        phi = basis.values(s)
        for j in range(len(s)):
            coefficients[:q] += w[j] * phi[:q, j].reshape((q,) + (1,) * end_value.ndim) * np.asarray(v(t0 + k * s[j]))
    partial = np.tensordot(basis.end[:q], coefficients[:q], axes=1) if q > 0 else 0.0
    coefficients[q] = (end_value - partial) / basis.end[q]
    return coefficients


def st_project(u_at: Callable[[float], object], space: FESpace, partition: TimePartition, q: int,
               stab=None, inflow: Optional[Callable[[float], np.ndarray]] = None,
               order: str = "space-first") -> SpaceTimeSolution:
    """
    pi_st u slab by slab. `u_at(t)` returns a ScalarField with gradient.
    `order` selects pi-t(pi-hat u) ("space-first") or pi-hat(pi-t u)
    ("time-first"); both give the same result.
    """
    if order not in ("space-first", "time-first"):
        raise ValueError("order must be 'space-first' or 'time-first'")
    A = stab.A if stab is not None else None
    projector = Projector(space, A, constrained=inflow is not None)

    def projected(t):
        return projector(u_at(t), inflow(t) if inflow is not None else None)

    def load_at(t):
        return projector.load(u_at(t))

    solution = SpaceTimeSolution(partition=partition, q=q, initial=projected(0.0), blocks=[])
    for n in range(1, partition.n_slabs + 1):
        t0, t1 = partition.slab(n)
        if order == "space-first":
            block = time_project(projected, t0, t1, q)
        else:
            loads = time_project(load_at, t0, t1, q)
            bvals = time_project(inflow, t0, t1, q) if inflow is not None else [None] * (q + 1)
            block = np.array([projector.solve(loads[a], bvals[a]) for a in range(q + 1)])
        solution.blocks.append(block)
        solution.endpoints.append(DGTimeBasis(q).end @ block)
    return solution


# ---------------------------------------------------------------------------
# snapshot export

def export_snapshot(space: FESpace, values: np.ndarray, path, fmt: str = "csv", name: str = "u") -> Path:
    """
    CSV: one row per dof (dof, x, y, value). VTK: legacy ASCII unstructured
    grid over the mesh vertices with the vertex dofs as point data.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values, dtype=float)
    if fmt == "csv":
        with path.open("w", encoding="utf-8") as f:
            f.write(f"dof,x,y,{name}\n")
            for i, ((x, y), v) in enumerate(zip(space.node_coords, values)):
                f.write(f"{i},{x:.12g},{y:.12g},{v:.12g}\n")
    elif fmt == "vtk":
        mesh = space.mesh
        with path.open("w", encoding="utf-8") as f:
            f.write("# vtk DataFile Version 3.0\n")
            f.write(f"{name} snapshot\nASCII\nDATASET UNSTRUCTURED_GRID\n")
            f.write(f"POINTS {mesh.n_vertices} double\n")
            for x, y in mesh.vertices:
                f.write(f"{x:.12g} {y:.12g} 0\n")
            f.write(f"CELLS {mesh.n_elements} {4 * mesh.n_elements}\n")
            for a, b, c in mesh.triangles:
                f.write(f"3 {a} {b} {c}\n")
            f.write(f"CELL_TYPES {mesh.n_elements}\n")
            f.write("5\n" * mesh.n_elements)
            f.write(f"POINT_DATA {mesh.n_vertices}\nSCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in values[:mesh.n_vertices]:
                f.write(f"{v:.12g}\n")
    else:
        raise ValueError(f"unknown snapshot format '{fmt}'")
    return path
