# src/stab.py
"""
Per-element stabilisation parameters and spectral-gap diagnostics.

    tau_T   = h_T^2 / (4 C_INV^2 p^4)
    C_delta = C_inv^2 / 6 * (3 ||x n2||_{Linf(d-T)} + 2 ||n1||_{Linf(dT)}^2)
    delta_T = C_delta p^4 / h_T^2
    alpha, beta, gamma = 1/(8 delta), 1/(24 delta^2), 1/(64 delta^3)
    A_T     = [[alpha, beta], [beta, gamma]]

d-T is the part of the element boundary where x n2 < 0.
"""
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from src.fespace import FESpace, InverseConstants, inverse_constants
from src.linalg import eigen_smallest_generalized
from src.logger import log_debug, log_info
from src.mesh import Mesh

POINCARE_SAFETY = 1.25
UNIT_SQUARE_POINCARE = 4.0 / np.pi ** 2     # zero trace on y = 0 only


@dataclass(frozen=True, eq=False)
class StabParams:
    p: int
    h: np.ndarray
    C_INV: np.ndarray
    C_inv: np.ndarray
    xn2_minus: np.ndarray     # ||x n2||_{Linf(d-T)}, 0 when d-T is empty
    n1_max: np.ndarray        # ||n1||_{Linf(dT)}
    C_delta: np.ndarray
    tau: np.ndarray
    delta: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    abc_scale: tuple = (1.0, 1.0, 1.0)

    @property
    def A(self) -> np.ndarray:
        """(nt, 2, 2) symmetric matrices."""
        A = np.empty((len(self.alpha), 2, 2))
        A[:, 0, 0] = self.alpha
        A[:, 0, 1] = A[:, 1, 0] = self.beta
        A[:, 1, 1] = self.gamma
        return A

    @property
    def n_elements(self) -> int:
        return len(self.h)

    def check_spd(self):
        """Cholesky of every A_T; raises numpy.linalg.LinAlgError otherwise."""
        np.linalg.cholesky(self.A)
        return True

    def zero(self) -> "StabParams":
        """Same ledger with tau and A switched off (plain Galerkin)."""
        zeros = np.zeros_like(self.tau)
        return StabParams(self.p, self.h, self.C_INV, self.C_inv, self.xn2_minus, self.n1_max,
                          self.C_delta, zeros, self.delta, zeros, zeros, zeros, self.abc_scale)

    def without_A(self) -> "StabParams":
        """SUPG ledger: tau kept, A switched off."""
        zeros = np.zeros_like(self.tau)
        return StabParams(self.p, self.h, self.C_INV, self.C_inv, self.xn2_minus, self.n1_max,
                          self.C_delta, self.tau, self.delta, zeros, zeros, zeros, self.abc_scale)


def boundary_weights(mesh: Mesh):
    """Per element: ||(x n2)_-||_{Linf(dT)} and max |n1| over the three edges."""
    tri = mesh.triangles
    normals = mesh.element_normals
    # local edge i joins local vertices i+1 and i+2
    xa = mesh.vertices[tri[:, [1, 2, 0]], 0]
    xb = mesh.vertices[tri[:, [2, 0, 1]], 0]
    n2 = normals[:, :, 1]
    # x n2 is affine along an edge, so its negative part peaks at an endpoint
    minus = np.maximum(np.maximum(-xa * n2, -xb * n2), 0.0)
    return minus.max(axis=1), np.abs(normals[:, :, 0]).max(axis=1)


def stab_params(mesh: Mesh, p: int, constants: InverseConstants,
                abc_scale: Sequence[float] = (1.0, 1.0, 1.0)) -> StabParams:
    if p < 1:
        raise ValueError("p must be positive")
    if len(constants.grad) != mesh.n_elements:
        raise ValueError("inverse constants do not match the mesh")
    h = mesh.h
    xn2_minus, n1_max = boundary_weights(mesh)
    C_delta = constants.trace ** 2 / 6.0 * (3.0 * xn2_minus + 2.0 * n1_max ** 2)
    if np.any(C_delta <= 0.0):
        bad = np.flatnonzero(C_delta <= 0.0)
        raise ValueError(f"C_delta vanishes on {len(bad)} element(s), first {bad[0]}")
    p4 = float(p) ** 4
    tau = h ** 2 / (4.0 * constants.grad ** 2 * p4)
    delta = C_delta * p4 / h ** 2
    s_alpha, s_beta, s_gamma = (float(s) for s in abc_scale)
    stab = StabParams(
        p=p,
        h=h,
        C_INV=constants.grad,
        C_inv=constants.trace,
        xn2_minus=xn2_minus,
        n1_max=n1_max,
        C_delta=C_delta,
        tau=tau,
        delta=delta,
        alpha=s_alpha / (8.0 * delta),
        beta=s_beta / (24.0 * delta ** 2),
        gamma=s_gamma / (64.0 * delta ** 3),
        abc_scale=(s_alpha, s_beta, s_gamma),
    )
    log_debug(f"stab p={p}: tau in [{tau.min():.3e}, {tau.max():.3e}], "
              f"delta in [{delta.min():.3e}, {delta.max():.3e}]")
    return stab


# ---------------------------------------------------------------------------
# spectral gap

@dataclass(frozen=True)
class SpectralGap:
    kappa: float
    c_hc: float
    C_PF: float
    h_min: float
    p: int
    branch: str     # which term of the min is active: "poincare" or "c_delta"

    def mu(self, steps, q: int) -> np.ndarray:
        """Per-step factors mu_n = kappa k_n / (4 (q+1)^2)."""
        return self.kappa * np.asarray(steps, dtype=float) / (4.0 * (q + 1) ** 2)

    def decay_product(self, steps, q: int) -> float:
        """prod_n (1 + mu_n)^-1, the bound on ||U(t_N)||_A^2 / ||U(t_0)||_A^2."""
        return float(np.prod(1.0 / (1.0 + self.mu(steps, q))))


def spectral_gap(stab: StabParams, h_min: float, p: int, C_PF: float) -> SpectralGap:
    """kappa = c_hc h_min^4 p^-8 with c_hc = 1/2 min{(192 C_PF)^-1, min_T C_delta}."""
    if C_PF <= 0:
        raise ValueError("C_PF must be positive")
    poincare_term = 1.0 / (192.0 * C_PF)
    c_delta_term = float(stab.C_delta.min())
    c_hc = 0.5 * min(poincare_term, c_delta_term)
    kappa = c_hc * h_min ** 4 / float(p) ** 8
    branch = "poincare" if poincare_term <= c_delta_term else "c_delta"
    return SpectralGap(kappa=kappa, c_hc=c_hc, C_PF=float(C_PF), h_min=float(h_min), p=int(p), branch=branch)


def decay_envelope(gap: SpectralGap, steps: Iterable[float], q: int, sharp: bool = False) -> np.ndarray:
    """
    Bound on ||U(t_n)||_A / ||U(t_0)||_A at every breakpoint (first entry 1).
    The default uses mu_n; `sharp` uses kappa k_n / (2 (q+1)^2) per step.
    """
    steps = np.asarray(list(steps), dtype=float)
    factor = gap.mu(steps, q)
    if sharp:
        factor = 2.0 * factor
    squared = np.concatenate([[1.0], np.cumprod(1.0 / (1.0 + factor))])
    return np.sqrt(squared)


def semi_discrete_envelope(gap: SpectralGap, t) -> np.ndarray:
    return np.exp(-gap.kappa * np.asarray(t, dtype=float) / 4.0)


def estimate_poincare(space: FESpace) -> float:
    """
    C_PF = 1 / lambda_min of (grad u, grad v) = lambda (u, v) on the space
    with zero inflow values; the discrete value bounds the continuous one
    from below and grows towards it under refinement.
    """
    if len(space.constrained_dofs) == 0:
        raise ValueError("Poincare estimate needs inflow constraints")
    free = space.free_dofs
    S = space.stiffness_matrix()[free][:, free]
    M = space.mass_matrix()[free][:, free]
    lam = eigen_smallest_generalized(S, M)
    c_pf = 1.0 / lam
    log_info(f"Poincare constant estimate C_PF={c_pf:.6f} (p={space.p}, {space.mesh.n_elements} elements)")
    return c_pf


def poincare_upper_bound(space: FESpace, safety: float = POINCARE_SAFETY) -> float:
    """
    Discrete estimate scaled by `safety`. Above the continuous C_PF as soon
    as the discrete eigenvalue is within that factor of its limit, which holds
    from a single P2 cell pair upwards on the unit square.
    """
    if safety < 1.0:
        raise ValueError("safety factor must be at least 1")
    return safety * estimate_poincare(space)


def ledger_rows(stab: StabParams) -> List[dict]:
    rows = []
    for e in range(stab.n_elements):
        rows.append({
            "element": e,
            "h": float(stab.h[e]),
            "C_INV": float(stab.C_INV[e]),
            "C_inv": float(stab.C_inv[e]),
            "tau": float(stab.tau[e]),
            "C_delta": float(stab.C_delta[e]),
            "delta": float(stab.delta[e]),
            "alpha": float(stab.alpha[e]),
            "beta": float(stab.beta[e]),
            "gamma": float(stab.gamma[e]),
        })
    return rows


def build_stab(space: FESpace, mode: str = "element", abc_scale=(1.0, 1.0, 1.0),
               constants: Optional[InverseConstants] = None) -> StabParams:
    """Inverse constants plus ledger for a space in one call."""
    constants = constants or inverse_constants(space, mode)
    return stab_params(space.mesh, space.p, constants, abc_scale)
