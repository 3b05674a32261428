"""Restarted GMRES with right preconditioning."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular


class SolverError(RuntimeError):
    """Linear solver failure; carries the residual history when available."""

    def __init__(self, msg, history=None, x=None):
        super().__init__(msg)
        self.history = [] if history is None else list(history)
        self.x = x


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    history: list = field(default_factory=list)  # unpreconditioned residual norms

    @property
    def residual(self) -> float:
        return self.history[-1]


def _givens(a: float, b: float):
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def gmres_solve(
    A,
    b: np.ndarray,
    precond=None,
    restart: int = 100,
    rtol: float = 1e-6,
    atol: float = 1e-10,
    max_iter: int = 2000,
) -> GmresResult:
    """Solve ``A x = b`` from ``x0 = 0`` with ``A M^{-1} u = b``, ``x = M^{-1} u``.

    Stops once ``||b - A x|| <= max(rtol ||b||, atol)``.  Inside a cycle the
    Givens recurrence gives that norm; it is recomputed exactly at each restart.
    ``precond`` is a callable (or has an ``apply`` method) returning ``M^{-1} v``.
    """
    if restart < 1:
        raise ValueError("restart length must be >= 1")
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    if precond is None:
        M = lambda v: v  # noqa: E731
    else:
        M = getattr(precond, "apply", precond)
    matvec = A.matvec if hasattr(A, "matvec") and not hasattr(A, "tocsr") else A.__matmul__

    b = np.asarray(b, dtype=float)
    n = b.size
    x = np.zeros(n)
    beta = float(np.linalg.norm(b))
    history = [beta]
    target = max(rtol * beta, atol)
    if beta <= target:
        return GmresResult(x, 0, history)

    r = b.copy()
    total = 0
    m = restart
    while True:
        V = np.empty((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        V[0] = r / beta
        g[0] = beta
        k = 0
        for j in range(m):
            w = matvec(M(V[j]))
            total += 1
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            for i in range(j):
                h0, h1 = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * h0 + sn[i] * h1
                H[i + 1, j] = -sn[i] * h0 + cs[i] * h1
            hnext = H[j + 1, j]
            cs[j], sn[j] = _givens(H[j, j], hnext)
            H[j, j] = cs[j] * H[j, j] + sn[j] * hnext
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            history.append(abs(g[j + 1]))
            breakdown = hnext <= 1e-14 * beta
            if not breakdown:
                V[j + 1] = w / hnext
            if abs(g[j + 1]) <= target or breakdown or total >= max_iter:
                break
        y = solve_triangular(H[:k, :k], g[:k])
        x += M(V[:k].T @ y)
        r = b - matvec(x)
        beta = float(np.linalg.norm(r))
        history[-1] = beta
        if beta <= target:
            return GmresResult(x, total, history)
        if total >= max_iter:
            raise SolverError(
                f"GMRES did not converge in {total} iterations "
                f"(residual {beta:.3e}, target {target:.3e})",
                history,
                x,
            )
