"""Jacobi-preconditioned conjugate gradient for sparse SPD systems."""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from .errors import SolverError


def conjugate_gradient(A, b, x0=None, rtol: float = 1e-8, atol: float = 0.0, maxiter: int | None = None):
    """Solve ``A x = b`` to ``|r| <= max(rtol |b|, atol)``.

    Returns ``(x, iterations, residual_norm)``. Raises when the iteration
    budget (default ``10 n``) runs out or the iterates stop being finite.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if maxiter is None:
        maxiter = 10 * max(n, 1)
    diag = np.asarray(A.diagonal(), dtype=float)
    M = sparse.diags(np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0))
    count = [0]

    def tick(_):
        count[0] += 1

    x, info = cg(A, b, x0=x0, rtol=rtol, atol=atol, maxiter=maxiter, M=M, callback=tick)
    res = float(np.linalg.norm(b - A @ x))
    if not np.all(np.isfinite(x)):
        raise SolverError("conjugate gradient produced non-finite values")
    if info > 0 and res > max(rtol * np.linalg.norm(b), atol) * 10:
        raise SolverError(f"conjugate gradient did not converge in {maxiter} iterations (residual {res:.3e})")
    return x, count[0], res
