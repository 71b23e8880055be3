# src/cases.py
"""
Named test problems for the Kolmogorov equation u_t - u_xx + x u_y = f on
(0,1)^2. Manufactured cases carry an exact solution written with jet
arithmetic; f and grad f follow from it.
"""
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from src import jets
from src.fespace import ScalarField
from src.jets import Jet
from src.logger import log_debug

SolutionJet = Callable[[Jet, Jet, Jet], Jet]


@dataclass(frozen=True)
class CaseDefinition:
    name: str
    solution: Optional[SolutionJet]         # u(t, x, y) on jets; None when unknown
    t_final: float                          # default final time
    t_max: float = np.inf                   # evaluation at t >= t_max is rejected
    initial: Optional[ScalarField] = None   # u0 when there is no exact solution
    description: str = ""

    @property
    def manufactured(self) -> bool:
        return self.solution is not None


def _check_time(case: CaseDefinition, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t >= case.t_max):
        raise ValueError(f"case '{case.name}': time outside [0, {case.t_max})")


def jet_eval(case: CaseDefinition, t, x, y) -> Jet:
    """All carried partials of u at (t, x, y); arrays broadcast."""
    if case.solution is None:
        raise ValueError(f"case '{case.name}' has no exact solution")
    _check_time(case, t)
    return case.solution(*jets.variables(t, x, y))


def forcing(case: CaseDefinition, t, x, y) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(f, f_x, f_y) with f = u_t - u_xx + x u_y."""
    x = np.asarray(x, dtype=float)
    if case.solution is None:
        zero = np.zeros(np.broadcast_shapes(np.shape(t), x.shape, np.shape(y)))
        return zero, zero, zero
    u = jet_eval(case, t, x, y)
    f = u.u_t - u.u_xx + x * u.u_y
    f_x = u.u_tx - u.u_xxx + u.u_y + x * u.u_xy
    f_y = u.u_ty - u.u_xxy + x * u.u_yy
    return f, f_x, f_y


def boundary(case: CaseDefinition, t, x, y) -> np.ndarray:
    """Inflow data g(t, .) = trace of u at the given points (zero without exact solution)."""
    if case.solution is None:
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y)))
    return jet_eval(case, t, x, y).value


def solution_field(case: CaseDefinition, t: float) -> ScalarField:
    """u(t, .) with its gradient, for projections and error norms."""
    def value(x, y):
        return jet_eval(case, t, x, y).value

    def gradient(x, y):
        u = jet_eval(case, t, x, y)
        return u.u_x, u.u_y

    return ScalarField(value=value, gradient=gradient)


def initial_field(case: CaseDefinition) -> ScalarField:
    if case.initial is not None:
        return case.initial
    return solution_field(case, 0.0)


# ---------------------------------------------------------------------------
# built-in cases

def _stationary_solution(t, x, y):
    return jets.sin(np.pi * x) ** 2 * jets.sin(np.pi * y)


def _instationary_solution(t, x, y):
    envelope = jets.exp(-(x - 0.5) ** 2 - (y - 0.5) ** 2)
    return envelope * jets.sin(np.pi * x) ** 2 * jets.sin(np.pi * (y - t - 0.5)) / (2.0 - t) + 1.0


def _hat_value(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.maximum(0.0, np.minimum(1.0 - np.abs(x - 0.5), 1.0 - np.abs(y - 0.5)))


def _hat_gradient(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx, dy = x - 0.5, y - 0.5
    support = np.minimum(1.0 - np.abs(dx), 1.0 - np.abs(dy)) > 0.0
    x_active = np.abs(dx) > np.abs(dy)
    gx = np.where(support & x_active, -np.sign(dx), 0.0)
    gy = np.where(support & ~x_active, -np.sign(dy), 0.0)
    return gx, gy


def case_stationary() -> CaseDefinition:
    return CaseDefinition(
        name="stationary",
        solution=_stationary_solution,
        t_final=1.0,
        description="u = sin^2(pi x) sin(pi y), time independent; single slab, q = 0",
    )


def case_instationary() -> CaseDefinition:
    return CaseDefinition(
        name="instationary",
        solution=_instationary_solution,
        t_final=1.0,
        t_max=2.0,
        description="travelling bump with inhomogeneous inflow data on y = 0",
    )


def case_decay() -> CaseDefinition:
    return CaseDefinition(
        name="decay",
        solution=None,
        t_final=8.0,
        initial=ScalarField(value=_hat_value, gradient=_hat_gradient),
        description="f = 0, hat initial datum; decay of ||U(t)||_A",
    )


_REGISTRY: Dict[str, Callable[[], CaseDefinition]] = {
    "stationary": case_stationary,
    "instationary": case_instationary,
    "decay": case_decay,
}


def register_case(name: str, factory: Callable[[], CaseDefinition]):
    """Add a user-defined case; the factory returns a CaseDefinition."""
    if not callable(factory):
        raise TypeError("case factory must be callable")
    _REGISTRY[name] = factory
    log_debug(f"registered case '{name}'")


def get_case(name: str) -> CaseDefinition:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown case '{name}' (available: {', '.join(available_cases())})") from None


def available_cases():
    return sorted(_REGISTRY)
