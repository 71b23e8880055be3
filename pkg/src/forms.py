# src/forms.py
"""
Bilinear forms and load vectors of the Galerkin, SUPG and hypocoercive
methods. Rows are test functions, columns trial functions.

With L U = -U_xx + x U_y elementwise:

    M       (U, V)
    M_A     (U, V) + (grad U, A grad V)
    K_gal   (U_x, V_x) + (x U_y, V)
    K_ss    sum_T (L U, tau x V_y)_T
    K_st    sum_T (L U, tau V)_T          pairs with V_t
    K_ts    sum_T (U, tau x V_y)_T        pairs with U_t
    K_tt    sum_T (U, tau V)_T            pairs U_t with V_t
    K_hypo  sum_T (grad L U, A grad V)_T
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from src.cases import CaseDefinition, forcing
from src.fespace import FESpace
from src.linalg import write_matrix_market
from src.logger import log_debug
from src.quadrature import RHS_DEGREE, matrix_degree
from src.stab import StabParams

VARIANTS = ("galerkin", "supg", "hypo")


def effective_stab(stab: StabParams, variant: str) -> StabParams:
    """The ledger a method actually uses: Galerkin drops tau and A, SUPG drops A."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant '{variant}' (expected one of {VARIANTS})")
    if variant == "galerkin":
        return stab.zero()
    if variant == "supg":
        return stab.without_A()
    return stab


def required_degree(p: int) -> int:
    # (x U_y, tau x V_y) has degree 2p
    return 2 * p + 1


@dataclass(eq=False)
class SpatialOperators:
    variant: str
    space: FESpace
    stab: StabParams
    M: sp.csr_matrix
    M_A: sp.csr_matrix
    K_gal: sp.csr_matrix
    K_ss: sp.csr_matrix
    K_st: sp.csr_matrix
    K_ts: sp.csr_matrix
    K_tt: sp.csr_matrix
    K_hypo: sp.csr_matrix

    @property
    def time_mass(self) -> sp.csr_matrix:
        """Inner product paired with U_t: M_A for the hypocoercive method, M otherwise."""
        return self.M_A if self.variant == "hypo" else self.M

    def spatial_form(self) -> sp.csr_matrix:
        """a_h(U, V) with V_t := 0 and U_t := 0."""
        return (self.K_gal + self.K_ss + self.K_hypo).tocsr()

    def quadratic_form(self, w: np.ndarray) -> float:
        return float(w @ (self.spatial_form() @ w))


def _pair(weight, test, trial):
    return np.einsum("eq,eiq,ejq->eij", weight, test, trial)


def _a_pair(weight, A, test, trial):
    """(trial gradient, A test gradient) with A per element."""
    tx, ty = test
    ux, uy = trial
    a = weight * A[:, 0, 0][:, None]
    b = weight * A[:, 0, 1][:, None]
    c = weight * A[:, 1, 1][:, None]
    return _pair(a, tx, ux) + _pair(b, ty, ux) + _pair(b, tx, uy) + _pair(c, ty, uy)


def assemble_spatial(space: FESpace, stab: StabParams, variant: str = "hypo",
                     degree: Optional[int] = None) -> SpatialOperators:
    degree = matrix_degree(space.p) if degree is None else int(degree)
    if degree < required_degree(space.p):
        raise ValueError(f"quadrature degree {degree} below the required {required_degree(space.p)}")
    stab = effective_stab(stab, variant)
    A_all = stab.A
    nt, nloc = space.mesh.n_elements, space.n_local
    names = ("M", "M_A", "K_gal", "K_ss", "K_st", "K_ts", "K_tt", "K_hypo")
    local = {name: np.empty((nt, nloc, nloc)) for name in names}
    for sl, t in space.volume_chunks(degree, 3):
        w = t.weights
        x = t.points[..., 0]
        xw = x[:, None, :]
        phi = t.phi
        px, py = phi[(1, 0)], phi[(0, 1)]
        L = -phi[(2, 0)] + xw * py
        gLx = -phi[(3, 0)] + py + xw * phi[(1, 1)]
        gLy = -phi[(2, 1)] + xw * phi[(0, 2)]
        tau = stab.tau[sl][:, None]
        A = A_all[sl]

        mass = _pair(w, phi[(0, 0)], phi[(0, 0)])
        local["M"][sl] = mass
        local["M_A"][sl] = mass + _a_pair(w, A, (px, py), (px, py))
        local["K_gal"][sl] = _pair(w, px, px) + _pair(w * x, phi[(0, 0)], py)
        local["K_ss"][sl] = _pair(w * tau * x, py, L)
        local["K_st"][sl] = _pair(w * tau, phi[(0, 0)], L)
        local["K_ts"][sl] = _pair(w * tau * x, py, phi[(0, 0)])
        local["K_tt"][sl] = _pair(w * tau, phi[(0, 0)], phi[(0, 0)])
        local["K_hypo"][sl] = _a_pair(w, A, (px, py), (gLx, gLy))

    ops = SpatialOperators(variant=variant, space=space, stab=stab,
                           **{name: space.scatter(local[name]) for name in names})
    log_debug(f"assembled {variant} operators: {space.n_dofs} dofs, nnz(M)={ops.M.nnz}")
    return ops


class RhsFunctional:
    """
    Load vectors at time t:
        b(t)   = <f, V>_A + (f, tau x V_y)
        b_t(t) = (f, tau V)                   pairs with V_t
    A and tau come from the (variant-effective) ledger.
    """

    def __init__(self, space: FESpace, stab: StabParams, case: CaseDefinition,
                 degree: int = RHS_DEGREE):
        self.space = space
        self.stab = stab
        self.case = case
        self.degree = degree
        self.active = case.manufactured

    def __call__(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        n = self.space.n_dofs
        if not self.active:
            return np.zeros(n), np.zeros(n)
        tab = self.space.volume_tables(self.degree, 1)
        x, y = tab.points[..., 0], tab.points[..., 1]
        f, fx, fy = forcing(self.case, t, x, y)
        w = tab.weights
        A = self.stab.A
        tau = self.stab.tau[:, None]
        phi, px, py = tab.phi[(0, 0)], tab.phi[(1, 0)], tab.phi[(0, 1)]
        afx = A[:, 0, 0][:, None] * fx + A[:, 0, 1][:, None] * fy
        afy = A[:, 1, 0][:, None] * fx + A[:, 1, 1][:, None] * fy
        main = (np.einsum("eq,eiq->ei", w * f, phi)
                + np.einsum("eq,eiq->ei", w * afx, px)
                + np.einsum("eq,eiq->ei", w * afy, py)
                + np.einsum("eq,eiq->ei", w * tau * f * x, py))
        with_vt = np.einsum("eq,eiq->ei", w * tau * f, phi)
        return self.space.scatter_vector(main), self.space.scatter_vector(with_vt)


def assemble_rhs(space: FESpace, stab: StabParams, case: CaseDefinition, t: float,
                 variant: str = "hypo") -> Tuple[np.ndarray, np.ndarray]:
    """Unconstrained load vectors; inflow rows are lifted in apply_constraints."""
    return RhsFunctional(space, effective_stab(stab, variant), case)(t)


def apply_constraints(matrix, rhs: np.ndarray, dofs: np.ndarray, values: np.ndarray):
    """
    Strong imposition: constrained rows and columns are cleared, the diagonal
    set to one, the right-hand side lifted by the known values.
    """
    matrix = sp.csr_matrix(matrix)
    n = matrix.shape[0]
    fixed = np.zeros(n)
    fixed[dofs] = 1.0
    known = np.zeros(n)
    known[dofs] = values
    free = sp.diags(1.0 - fixed)
    lifted = rhs - matrix @ known
    out = (free @ matrix @ free + sp.diags(fixed)).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out, (1.0 - fixed) * lifted + known


def export_matrix(matrix, path, comment: str = ""):
    return write_matrix_market(path, matrix, comment)
