"""Newton-Raphson outer loop and sparse linear solvers.

``newton_solve`` drives any problem object exposing
``system(values, want_matrix=...) -> (LinearSystem|None, rhs, norm)``.
The linear solve is restarted GMRES (scipy) with a block-Jacobi or ILU
preconditioner, or a direct sparse LU; GMRES failures fall back to the
direct solver for systems of up to 20000 unknowns.  Iteration traces are
emitted as ``newton iter=<k> res=<value>`` log lines.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import Breakdown, LinearSolveFailure, Stagnation, UstflowError

logger = logging.getLogger("ustflow")


@dataclass
class NewtonConfig:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6
    max_iter: int = 30
    linesearch: str = "none"  # or "backtracking"

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0 or self.max_iter < 1:
            raise ValueError("tolerances must be positive, max_iter >= 1")
        if self.linesearch not in ("none", "backtracking"):
            raise ValueError(f"unknown linesearch {self.linesearch!r}")


@dataclass
class LinearSolverConfig:
    method: str = "gmres_restarted"  # or "direct_lu"
    restart: int = 60
    max_krylov_iter: int = 2000
    lin_rel_tol: float = 1e-8
    preconditioner: str = "ilu0"     # "jacobi_block", "ilu0" or "none"

    def __post_init__(self):
        if self.restart < 1:
            raise ValueError("restart must be >= 1")


@dataclass
class NewtonResult:
    values: np.ndarray
    trace: list
    iterations: int
    converged: bool
    status: str  # "converged" or "max_iterations"


def block_jacobi_preconditioner(A: sp.csr_matrix, block_size: int):
    """Inverse of the per-node diagonal blocks as a LinearOperator."""
    n = A.shape[0]
    if n % block_size:
        raise ValueError("matrix size not divisible by block size")
    nb = n // block_size
    Ab = A.tobsr(blocksize=(block_size, block_size))
    blocks = np.zeros((nb, block_size, block_size))
    indptr, indices = Ab.indptr, Ab.indices
    for r in range(nb):
        cols = indices[indptr[r]: indptr[r + 1]]
        hit = np.nonzero(cols == r)[0]
        if len(hit):
            blocks[r] = Ab.data[indptr[r] + hit[0]]
        else:
            blocks[r] = np.eye(block_size)
    # guard singular blocks with the identity
    dets = np.abs(np.linalg.det(blocks))
    bad = (dets < 1e-300) | ~np.isfinite(dets)
    if bad.any():
        blocks[bad] = np.eye(block_size)
    inv = np.linalg.inv(blocks)

    def apply(x):
        return np.einsum("nij,nj->ni", inv, x.reshape(nb, block_size)).ravel()

    return spla.LinearOperator(A.shape, matvec=apply)


def _make_preconditioner(A: sp.csr_matrix, cfg: LinearSolverConfig,
                         block_size: int):
    if cfg.preconditioner == "none":
        return None
    if cfg.preconditioner == "jacobi_block":
        return block_jacobi_preconditioner(A, block_size)
    if cfg.preconditioner == "ilu0":
        for drop, fill in ((1e-5, 10.0), (1e-8, 20.0)):
            try:
                ilu = spla.spilu(A.tocsc(), drop_tol=drop, fill_factor=fill)
                return spla.LinearOperator(A.shape, matvec=ilu.solve)
            except RuntimeError:
                continue
        logger.warning("ILU factorization singular, "
                       "falling back to block-Jacobi")
        return block_jacobi_preconditioner(A, block_size)
    raise ValueError(f"unknown preconditioner {cfg.preconditioner!r}")


def direct_lu(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Sparse LU solve; the oracle and fallback path."""
    try:
        lu = spla.splu(sp.csc_matrix(A))
        x = lu.solve(b)
    except RuntimeError as exc:
        raise LinearSolveFailure(f"sparse LU failed: {exc}") from exc
    if not np.isfinite(x).all():
        raise LinearSolveFailure("direct solve produced non-finite values")
    return x


def gmres_solve(A: sp.spmatrix, b: np.ndarray, cfg: LinearSolverConfig = None,
                block_size: int = 1):
    """Restarted GMRES with the configured preconditioner.

    The system is symmetrically equilibrated by 1/sqrt(|diag|) first, which
    evens out the wildly different row scales of the stabilized space-time
    systems.  Returns (x, stats).  Raises Stagnation/Breakdown when the
    relative residual target is missed; callers may fall back to
    ``direct_lu``.
    """
    cfg = cfg or LinearSolverConfig()
    A = sp.csr_matrix(A)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), {"iterations": 0, "relres": 0.0}

    d = np.abs(A.diagonal())
    d[d < 1e-300] = 1.0
    scale = 1.0 / np.sqrt(d)
    D = sp.diags(scale)
    As = (D @ A @ D).tocsr()
    bs = scale * b

    M = _make_preconditioner(As, cfg, block_size)
    count = {"iterations": 0}

    def cb(_):
        count["iterations"] += 1

    maxouter = max(1, math.ceil(cfg.max_krylov_iter / cfg.restart))
    y, info = spla.gmres(As, bs, rtol=cfg.lin_rel_tol, atol=0.0,
                         restart=cfg.restart, maxiter=maxouter, M=M,
                         callback=cb, callback_type="pr_norm")
    x = scale * y
    relres = float(np.linalg.norm(b - A @ x)) / bnorm
    stats = {"iterations": count["iterations"], "relres": relres}
    if info < 0:
        raise Breakdown(f"gmres breakdown (info={info})")
    if info > 0 and relres > cfg.lin_rel_tol * 10.0:
        raise Stagnation(
            f"gmres stagnated at relres={relres:.3e} "
            f"after {count['iterations']} iterations")
    return x, stats


def solve_linear_system(A: sp.spmatrix, b: np.ndarray,
                        cfg: LinearSolverConfig = None,
                        block_size: int = 1) -> np.ndarray:
    cfg = cfg or LinearSolverConfig()
    if cfg.method == "direct_lu":
        return direct_lu(A, b)
    if cfg.method != "gmres_restarted":
        raise ValueError(f"unknown linear solver {cfg.method!r}")
    try:
        x, _ = gmres_solve(A, b, cfg, block_size)
        return x
    except LinearSolveFailure:
        if A.shape[0] <= 20000:
            return direct_lu(A, b)
        raise


def newton_solve(problem, initial_values: np.ndarray,
                 cfg: NewtonConfig = None,
                 lin_cfg: LinearSolverConfig = None) -> NewtonResult:
    """Newton iteration with frozen-tau linearization supplied by ``problem``.

    Convergence when ||R|| <= max(abs_tol, rel_tol * ||R0||).  On reaching
    max_iter the best iterate seen and the full trace are returned with
    status "max_iterations".
    """
    cfg = cfg or NewtonConfig()
    lin_cfg = lin_cfg or LinearSolverConfig()
    U = np.asarray(initial_values, dtype=float).copy()
    shape = U.shape
    block_size = shape[1] if U.ndim == 2 else 1

    system, rhs, rnorm = problem.system(U)
    trace = [rnorm]
    logger.info("newton iter=0 res=%.6e", rnorm)
    tol = max(cfg.abs_tol, cfg.rel_tol * rnorm)
    if rnorm <= tol:
        return NewtonResult(U, trace, 0, True, "converged")

    best_U, best_r = U.copy(), rnorm
    for k in range(1, cfg.max_iter + 1):
        delta = solve_linear_system(system.matrix, rhs, lin_cfg, block_size)
        if cfg.linesearch == "backtracking":
            lam = 1.0
            prev = trace[-1]
            for _ in range(8):
                try:
                    r_trial = problem.residual_norm(
                        U + lam * delta.reshape(shape))
                except UstflowError:
                    r_trial = np.inf
                if np.isfinite(r_trial) and r_trial <= (1.0 - 1e-4 * lam) * prev:
                    break
                lam *= 0.5
            U = U + lam * delta.reshape(shape)
        else:
            U = U + delta.reshape(shape)

        system, rhs, rnorm = problem.system(U)
        trace.append(rnorm)
        logger.info("newton iter=%d res=%.6e", k, rnorm)
        if rnorm < best_r:
            best_U, best_r = U.copy(), rnorm
        if rnorm <= tol:
            return NewtonResult(U, trace, k, True, "converged")

    return NewtonResult(best_U, trace, cfg.max_iter, False, "max_iterations")
