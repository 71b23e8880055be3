# src/linalg.py
"""
Sparse and dense solver kernels: restarted GMRES with Jacobi/ILU
preconditioning, sparse and dense LU, extremal generalized eigenvalues and
Matrix Market I/O.
"""
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.config import SolverOptions
from src.logger import log_debug, log_warning

DENSE_EIGEN_CAP = 1500


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    wall_s: float
    method: str = "gmres"
    preconditioner: str = "none"

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "wall_s": self.wall_s,
            "method": self.method,
            "preconditioner": self.preconditioner,
        }


class SolverError(RuntimeError):
    """Linear solve failed; `report` holds the last SolveReport."""

    def __init__(self, message: str, report: Optional[SolveReport] = None):
        super().__init__(message)
        self.report = report


def as_csr(matrix) -> sp.csr_matrix:
    """CSR with sorted, duplicate-free column indices."""
    out = sp.csr_matrix(matrix)
    out.sum_duplicates()
    out.sort_indices()
    return out


def _relative_residual(A, x, b) -> float:
    bnorm = np.linalg.norm(b)
    r = np.linalg.norm(b - A @ x)
    return float(r / bnorm) if bnorm > 0 else float(r)


def make_preconditioner(A, kind: str = "ilu0", drop_tol: float = 1e-8,
                        fill_factor: float = 20.0) -> Optional[spla.LinearOperator]:
    """
    Build an approximate inverse for GMRES. "ilu0" keeps the sparsity of A
    (no fill, no dropping), "ilu" is threshold ILU.
    """
    if kind in (None, "none"):
        return None
    A = as_csr(A)
    n = A.shape[0]
    if kind == "jacobi":
        diag = A.diagonal()
        if np.any(diag == 0):
            raise np.linalg.LinAlgError("zero diagonal entry; Jacobi preconditioner undefined")
        inv = 1.0 / diag
        return spla.LinearOperator((n, n), matvec=lambda v: inv * v, dtype=float)
    if kind == "ilu0":
        ilu = spla.spilu(A.tocsc(), drop_tol=0.0, fill_factor=1.0)
    elif kind == "ilu":
        ilu = spla.spilu(A.tocsc(), drop_tol=drop_tol, fill_factor=fill_factor)
    else:
        raise ValueError(f"unknown preconditioner '{kind}'")
    return spla.LinearOperator((n, n), matvec=ilu.solve, dtype=float)


def gmres(A, b, tol: float = 1e-10, restart: int = 60, max_iter: int = 2000,
          preconditioner: str = "none", M=None, x0=None, refinements: int = 3) -> Tuple[np.ndarray, SolveReport]:
    """
    Restarted GMRES. Convergence is judged on the true relative residual
    ||Ax - b|| / ||b||; when the preconditioned iteration stops short of it,
    GMRES is restarted from the current iterate (at most `refinements` times).
    Non-convergence is reported, not raised; NaN raises SolverError.
    """
    A = as_csr(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}")
    if not np.all(np.isfinite(b)):
        raise SolverError("non-finite right-hand side")
    start = time.perf_counter()
    if np.linalg.norm(b) == 0.0:
        report = SolveReport(0, 0.0, True, time.perf_counter() - start, "gmres", preconditioner)
        return np.zeros_like(b), report
    if M is None:
        M = make_preconditioner(A, preconditioner)

    counter = {"n": 0}

    def _count(_):
        counter["n"] += 1

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    residual = _relative_residual(A, x, b)
    for _ in range(refinements + 1):
        if residual <= tol:
            break
        remaining = max(1, max_iter - counter["n"])
        x, info = spla.gmres(A, b, x0=x, rtol=tol, atol=0.0, restart=restart,
                             maxiter=max(1, remaining // restart + 1), M=M,
                             callback=_count, callback_type="pr_norm")
        if not np.all(np.isfinite(x)):
            report = SolveReport(counter["n"], float("nan"), False,
                                 time.perf_counter() - start, "gmres", preconditioner)
            raise SolverError("GMRES produced non-finite values", report)
        residual = _relative_residual(A, x, b)
        if info < 0:
            log_warning(f"GMRES breakdown (info={info})")
            break
        if counter["n"] >= max_iter:
            break

    report = SolveReport(
        iterations=counter["n"],
        residual=residual,
        converged=residual <= tol,
        wall_s=time.perf_counter() - start,
        method="gmres",
        preconditioner=preconditioner,
    )
    log_debug(f"gmres: n={A.shape[0]} iters={report.iterations} res={residual:.3e}")
    return x, report


def dense_factorize(A, cap: int = 3000):
    """Partial-pivoted dense LU; refuses systems larger than `cap`."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    n = A.shape[0]
    if n > cap:
        raise ValueError(f"dense LU refused: n={n} exceeds cap {cap}")
    lu, piv = sla.lu_factor(A, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.size and pivots.min() <= np.finfo(float).eps * max(pivots.max(), 1.0) * n:
        raise np.linalg.LinAlgError("matrix is singular to working precision")
    return lambda b: sla.lu_solve((lu, piv), np.asarray(b, dtype=float))


def dense_lu_solve(A, b, cap: int = 3000) -> np.ndarray:
    return dense_factorize(A, cap)(b)


def factorize(A):
    """Sparse LU (SuperLU); returns the solve callable."""
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as e:
        raise np.linalg.LinAlgError(str(e)) from e
    return lu.solve


def direct_solve(A, b) -> np.ndarray:
    return factorize(A)(np.asarray(b, dtype=float))


class LinearSolver:
    """
    One operator, many right-hand sides: the factorisation (direct) or
    preconditioner (gmres) is built once and reused.
    """

    def __init__(self, A, options: Optional[SolverOptions] = None):
        self.options = options or SolverOptions()
        self.A = as_csr(A)
        start = time.perf_counter()
        if self.options.method == "direct":
            self._lu = factorize(self.A)
            self._M = None
        elif self.options.method == "dense":
            self._lu = dense_factorize(self.A, self.options.dense_cap)
            self._M = None
        else:
            self._lu = None
            self._M = make_preconditioner(self.A, self.options.preconditioner,
                                          self.options.ilu_drop_tol, self.options.ilu_fill_factor)
        self.setup_s = time.perf_counter() - start

    def solve(self, b, x0=None) -> Tuple[np.ndarray, SolveReport]:
        opts = self.options
        if self._lu is not None:
            start = time.perf_counter()
            x = self._lu(np.asarray(b, dtype=float))
            if not np.all(np.isfinite(x)):
                raise SolverError("direct solve produced non-finite values")
            report = SolveReport(1, _relative_residual(self.A, x, b), True,
                                 time.perf_counter() - start, opts.method, "none")
            return x, report
        x, report = gmres(self.A, b, tol=opts.tol, restart=opts.restart, max_iter=opts.max_iter,
                          preconditioner=opts.preconditioner, M=self._M, x0=x0)
        if not report.converged:
            raise SolverError(
                f"GMRES did not converge: residual {report.residual:.3e} after {report.iterations} iterations",
                report,
            )
        return x, report


def eigen_largest_generalized(S, M) -> float:
    """Largest eigenvalue of S v = lambda M v (S symmetric, M SPD), dense."""
    S = S.toarray() if sp.issparse(S) else np.asarray(S, dtype=float)
    M = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    values = sla.eigh(S, M, eigvals_only=True)
    return float(values[-1])


def eigen_smallest_generalized(S, M) -> float:
    """
    Smallest eigenvalue of S v = lambda M v. Dense below DENSE_EIGEN_CAP,
    otherwise shift-invert Lanczos around zero.
    """
    n = S.shape[0]
    if n <= DENSE_EIGEN_CAP:
        Sd = S.toarray() if sp.issparse(S) else np.asarray(S, dtype=float)
        Md = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
        return float(sla.eigh(Sd, Md, eigvals_only=True, subset_by_index=[0, 0])[0])
    values = spla.eigsh(sp.csc_matrix(S), k=1, M=sp.csc_matrix(M), sigma=0.0,
                        which="LM", return_eigenvectors=False)
    return float(values[0])


def write_matrix_market(path, matrix, comment: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment)
    return path if path.suffix == ".mtx" else path.with_name(path.name + ".mtx")


def read_matrix_market(path) -> sp.csr_matrix:
    return as_csr(scipy.io.mmread(str(path)))
