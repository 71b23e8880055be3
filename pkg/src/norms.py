# src/norms.py
"""
Norms of discrete fields and of errors against exact solutions.

    ||w||_A^2     = (w, w) + (grad w, A grad w)
    |||w|||_SUPG^2 = ||w_x||^2 + ||sqrt(x n2) w||^2_{outflow} + ||sqrt(tau)(w_t + x w_y)||^2
    |||w|||^2      = 1/2 ||w_x||^2 + ||sqrt(gamma delta) w_y||^2 + 1/2 ||sqrt(tau)(w_t + x w_y)||^2
                   + ||sqrt(A) grad w_x||^2 + ||sqrt(x n2) w||^2_{outflow}
                   + sum_T int_{dT} (x n2)_+ grad w . A grad w

Fields are evaluated through a common interface, either from coefficients
(DiscreteField) or from jets of an exact solution (ClosureField).
"""
from dataclasses import dataclass, field
from math import log
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src import jets
from src.cases import CaseDefinition, jet_eval
from src.fespace import FacetTables, FESpace, VolumeTables
from src.logger import log_debug
from src.quadrature import RHS_DEGREE, gauss_interval
from src.stab import StabParams

VOLUME_KEYS = ("u", "x", "y", "xx", "xy", "yy", "t")
FACET_KEYS = ("u", "x", "y")
_TABLE_KEYS = {"u": (0, 0), "x": (1, 0), "y": (0, 1), "xx": (2, 0), "xy": (1, 1), "yy": (0, 2)}

HYPO_COMPONENTS = ("dx", "dy_gamma_delta", "streamline", "A_grad_dx", "outflow", "element_outflow")
SUPG_COMPONENTS = ("dx", "outflow", "streamline")


class DiscreteField:
    """Finite element field (and optional time derivative) given by coefficients."""

    def __init__(self, space: FESpace, coefficients: np.ndarray, time_derivative: Optional[np.ndarray] = None):
        self.space = space
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.time_derivative = time_derivative

    def _local(self, c):
        return c[self.space.element_dofs]

    def volume(self, tables: VolumeTables) -> Dict[str, np.ndarray]:
        c = self._local(self.coefficients)
        out = {key: np.einsum("ei,eiq->eq", c, tables.phi[k]) for key, k in _TABLE_KEYS.items()}
        if self.time_derivative is None:
            out["t"] = np.zeros_like(out["u"])
        else:
            out["t"] = np.einsum("ei,eiq->eq", self._local(self.time_derivative), tables.phi[(0, 0)])
        return out

    def facet(self, tables: FacetTables) -> Dict[str, np.ndarray]:
        c = self._local(self.coefficients)
        return {key: np.einsum("ei,ekiq->ekq", c, tables.phi[_TABLE_KEYS[key]]) for key in FACET_KEYS}


class ClosureField:
    """Field given by a jet evaluator (x, y) -> Jet at physical points."""

    def __init__(self, evaluator: Callable[[np.ndarray, np.ndarray], jets.Jet]):
        self.evaluator = evaluator

    @classmethod
    def for_case(cls, case: CaseDefinition, t: float) -> "ClosureField":
        return cls(lambda x, y: jet_eval(case, t, x, y))

    @classmethod
    def from_expression(cls, fn: Callable[[jets.Jet, jets.Jet, jets.Jet], jets.Jet], t: float = 0.0):
        """fn(t, x, y) written with jet arithmetic."""
        return cls(lambda x, y: fn(*jets.variables(t, x, y)))

    def _jet(self, points):
        x, y = points[..., 0], points[..., 1]
        u = self.evaluator(x, y)
        if not isinstance(u, jets.Jet):
            u = jets.Jet.constant(u, x.shape)
        return u

    def volume(self, tables: VolumeTables) -> Dict[str, np.ndarray]:
        u = self._jet(tables.points)
        shape = tables.weights.shape
        return {
            "u": np.broadcast_to(u.value, shape), "x": np.broadcast_to(u.u_x, shape),
            "y": np.broadcast_to(u.u_y, shape), "xx": np.broadcast_to(u.u_xx, shape),
            "xy": np.broadcast_to(u.u_xy, shape), "yy": np.broadcast_to(u.u_yy, shape),
            "t": np.broadcast_to(u.u_t, shape),
        }

    def facet(self, tables: FacetTables) -> Dict[str, np.ndarray]:
        u = self._jet(tables.points)
        shape = tables.weights.shape
        return {"u": np.broadcast_to(u.value, shape), "x": np.broadcast_to(u.u_x, shape),
                "y": np.broadcast_to(u.u_y, shape)}


class DifferenceField:
    """a - b, e.g. exact solution minus discrete solution."""

    def __init__(self, a, b):
        self.a = a
        self.b = b

    def volume(self, tables):
        va, vb = self.a.volume(tables), self.b.volume(tables)
        return {key: va[key] - vb[key] for key in VOLUME_KEYS}

    def facet(self, tables):
        fa, fb = self.a.facet(tables), self.b.facet(tables)
        return {key: fa[key] - fb[key] for key in FACET_KEYS}


def _as_field(w, space: FESpace, w_t=None):
    if isinstance(w, np.ndarray):
        return DiscreteField(space, w, w_t)
    if w_t is not None:
        raise ValueError("w_t only applies to coefficient vectors")
    return w


def _grad_A_grad(A, gx, gy):
    a, b, c = (A[:, 0, 0], A[:, 0, 1], A[:, 1, 1])
    shape = (-1,) + (1,) * (gx.ndim - 1)
    return a.reshape(shape) * gx ** 2 + 2.0 * b.reshape(shape) * gx * gy + c.reshape(shape) * gy ** 2


def norm_A_squared(w, space: FESpace, stab: Optional[StabParams], degree: int = RHS_DEGREE) -> float:
    w = _as_field(w, space)
    tab = space.volume_tables(degree, 2)
    v = w.volume(tab)
    integrand = v["u"] ** 2
    if stab is not None:
        integrand = integrand + _grad_A_grad(stab.A, v["x"], v["y"])
    return float(np.sum(tab.weights * integrand))


def norm_A(w, space: FESpace, stab: Optional[StabParams], degree: int = RHS_DEGREE) -> float:
    return float(np.sqrt(norm_A_squared(w, space, stab, degree)))


def _outflow_terms(f, space: FESpace, stab: StabParams, degree: int):
    ftab = space.facet_tables(degree)
    x = ftab.points[..., 0]
    xn2 = x * ftab.normals[:, :, 1][:, :, None]
    positive = np.maximum(xn2, 0.0)
    values = f.facet(ftab)
    on_boundary = ftab.outflow_boundary[:, :, None]
    outflow = float(np.sum(ftab.weights * positive * values["u"] ** 2 * on_boundary))
    element = float(np.sum(ftab.weights * positive * _grad_A_grad(stab.A, values["x"], values["y"])))
    return outflow, element


def hypo_components(w, space: FESpace, stab: StabParams, w_t=None, degree: int = RHS_DEGREE) -> Dict[str, float]:
    """The six squared summands of |||w|||^2."""
    f = _as_field(w, space, w_t)
    tab = space.volume_tables(degree, 2)
    v = f.volume(tab)
    wq = tab.weights
    x = tab.points[..., 0]
    streamline = v["t"] + x * v["y"]
    gd = (stab.gamma * stab.delta)[:, None]
    outflow, element = _outflow_terms(f, space, stab, degree)
    return {
        "dx": 0.5 * float(np.sum(wq * v["x"] ** 2)),
        "dy_gamma_delta": float(np.sum(wq * gd * v["y"] ** 2)),
        "streamline": 0.5 * float(np.sum(wq * stab.tau[:, None] * streamline ** 2)),
        "A_grad_dx": float(np.sum(wq * _grad_A_grad(stab.A, v["xx"], v["xy"]))),
        "outflow": outflow,
        "element_outflow": element,
    }


def supg_components(w, space: FESpace, stab: StabParams, w_t=None, degree: int = RHS_DEGREE) -> Dict[str, float]:
    f = _as_field(w, space, w_t)
    tab = space.volume_tables(degree, 2)
    v = f.volume(tab)
    wq = tab.weights
    x = tab.points[..., 0]
    streamline = v["t"] + x * v["y"]
    outflow, _ = _outflow_terms(f, space, stab, degree)
    return {
        "dx": float(np.sum(wq * v["x"] ** 2)),
        "outflow": outflow,
        "streamline": float(np.sum(wq * stab.tau[:, None] * streamline ** 2)),
    }


def norm_hypo(w, space: FESpace, stab: StabParams, w_t=None, degree: int = RHS_DEGREE) -> float:
    return float(np.sqrt(sum(hypo_components(w, space, stab, w_t, degree).values())))


def norm_supg(w, space: FESpace, stab: StabParams, w_t=None, degree: int = RHS_DEGREE) -> float:
    return float(np.sqrt(sum(supg_components(w, space, stab, w_t, degree).values())))


# ---------------------------------------------------------------------------
# space-time

@dataclass
class NormReport:
    err_A_final: float
    err_st: float
    components: Dict[str, float]
    dofs: int
    h_max: float
    k: float
    jump_terms: float = 0.0

    @property
    def total(self) -> float:
        """err_st^2 rebuilt from its parts."""
        return self.jump_terms + sum(self.components.values())

    def as_dict(self):
        return {"err_A_final": self.err_A_final, "err_st": self.err_st, "dofs": self.dofs,
                "h_max": self.h_max, "k": self.k, **{f"st_{k}": v for k, v in self.components.items()}}


class SpaceTimeErrorAccumulator:
    """
    Slab observer accumulating |||e|||_st for e = u - U (or U itself when
    `case` is None) together with ||e(t_n^-)||_A at every breakpoint.
    The time integrals use a Gauss rule with q+3 points per slab.
    """

    def __init__(self, space: FESpace, stab: StabParams, case: Optional[CaseDefinition] = None,
                 degree: int = RHS_DEGREE, extra_points: int = 3):
        self.space = space
        self.stab = stab
        self.case = case
        self.degree = degree
        self.extra_points = extra_points
        self.jump_sq = 0.0
        self.components = {name: 0.0 for name in HYPO_COMPONENTS}
        self.final_A_sq = 0.0
        self.trajectory: List[tuple] = []
        self.slabs = 0

    def _exact(self, t):
        return ClosureField.for_case(self.case, t) if self.case is not None else None

    def _error(self, t, coefficients, time_derivative=None):
        discrete = DiscreteField(self.space, coefficients, time_derivative)
        exact = self._exact(t)
        return discrete if exact is None else DifferenceField(exact, discrete)

    def start(self, t0: float, initial: np.ndarray):
        self.trajectory.append((t0, norm_A(self._error(t0, initial), self.space, self.stab, self.degree)))

    def on_slab(self, slab):
        if not self.trajectory:
            self.start(slab.t_start, slab.previous)
        if slab.n == 1:
            # e(t_0^+)
            self.jump_sq += 0.5 * norm_A_squared(self._error(slab.t_start, slab.right),
                                                 self.space, self.stab, self.degree)
        else:
            # u is continuous, so the error jump is the discrete one
            jump = slab.right - slab.previous
            self.jump_sq += 0.5 * norm_A_squared(DiscreteField(self.space, jump),
                                                 self.space, self.stab, self.degree)
        s, w = gauss_interval(slab.basis.q + self.extra_points)
        values = slab.at(s)
        rates = slab.time_derivative(s)
        for j in range(len(s)):
            t = slab.t_start + slab.k * s[j]
            parts = hypo_components(self._error(t, values[j], rates[j]), self.space, self.stab,
                                    degree=self.degree)
            for name, value in parts.items():
                self.components[name] += 0.25 * slab.k * w[j] * value
        self.final_A_sq = norm_A_squared(self._error(slab.t_end, slab.left), self.space, self.stab, self.degree)
        self.trajectory.append((slab.t_end, float(np.sqrt(self.final_A_sq))))
        self.slabs += 1

    @property
    def value(self) -> float:
        return float(np.sqrt(self.jump_sq + 0.5 * self.final_A_sq + sum(self.components.values())))

    def report(self, dofs: int, h_max: float, k: float) -> NormReport:
        log_debug(f"space-time norm over {self.slabs} slab(s): {self.value:.6e}")
        return NormReport(
            err_A_final=float(np.sqrt(self.final_A_sq)),
            err_st=self.value,
            components=dict(self.components),
            dofs=dofs,
            h_max=h_max,
            k=k,
            jump_terms=self.jump_sq + 0.5 * self.final_A_sq,
        )


def norm_st(solution, space: FESpace, stab: StabParams, case: Optional[CaseDefinition] = None,
            degree: int = RHS_DEGREE) -> float:
    """|||U|||_st of a stored solution, or |||u - U|||_st when `case` is given."""
    acc = SpaceTimeErrorAccumulator(space, stab, case, degree)
    for n in range(1, solution.partition.n_slabs + 1):
        acc.on_slab(solution.slab(n))
    return acc.value


class NormTrajectory:
    """Slab observer recording ||U(t_n^-)||_A through the assembled Gram matrix."""

    def __init__(self, gram, t0: float, initial: np.ndarray):
        self.gram = gram
        self.times = [float(t0)]
        self.values = [self._norm(initial)]

    def _norm(self, u):
        return float(np.sqrt(max(u @ (self.gram @ u), 0.0)))

    def on_slab(self, slab):
        self.times.append(slab.t_end)
        self.values.append(self._norm(slab.left))


def eoc(errors: Sequence[float], h_values: Sequence[float]) -> List[float]:
    """Experimental orders log(e_i / e_{i+1}) / log(h_i / h_{i+1})."""
    if len(errors) != len(h_values) or len(errors) < 2:
        raise ValueError("eoc needs two equally long sequences with at least two entries")
    if any(e <= 0 for e in errors) or any(h <= 0 for h in h_values):
        raise ValueError("errors and mesh sizes must be positive")
    return [log(errors[i] / errors[i + 1]) / log(h_values[i] / h_values[i + 1])
            for i in range(len(errors) - 1)]
