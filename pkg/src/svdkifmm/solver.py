"""
Restarted GMRES for matrix-free operators.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

REORTH_THRESHOLD = 1e-8


@dataclass
class IterationStats:
    """Convergence record of one :func:`gmres` call.

    ``final_residual`` is the true relative residual ``|b - A x| / |b|``
    recomputed at exit; ``residual_history`` holds the Arnoldi estimates
    (one per iteration, non-increasing within a restart cycle).
    """

    iterations: int = 0
    final_residual: float = np.inf
    converged: bool = False
    restarts: int = 0
    residual_history: list = field(default_factory=list)
    iteration_times: list = field(default_factory=list)
    cycle_starts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "final_residual": float(self.final_residual),
                "converged": bool(self.converged), "restarts": self.restarts,
                "residual_history": [float(r) for r in self.residual_history],
                "iteration_times": [float(t) for t in self.iteration_times]}


def as_operator(op) -> Callable[[np.ndarray], np.ndarray]:
    """Callable ``x -> A x`` from an array, a ``LinearOperator``-like object
    (anything with ``matvec``) or a plain callable."""
    if isinstance(op, np.ndarray):
        return lambda x: op @ x
    if hasattr(op, "matvec"):
        return op.matvec
    if callable(op):
        return op
    raise TypeError(f"cannot use {type(op).__name__} as a linear operator")


def _residual(A, b, x, bnorm):
    return float(np.linalg.norm(b - A(x)) / bnorm)


def gmres(op, b, tol: float = 1e-6, restart: int = 50, max_iter: int = 1000,
          x0: Optional[np.ndarray] = None, precond=None, callback=None):
    """Solve ``A x = b`` by GMRES(restart) with modified Gram-Schmidt.

    Parameters
    ----------
    op : operator
        Square linear operator (array, object with ``matvec``, or callable).
    b : (n,) array
    tol : float
        Target relative residual ``|b - A x| / |b|``.
    restart : int
        Krylov subspace size per cycle.
    max_iter : int
        Total Arnoldi steps over all cycles.
    x0 : array, optional
        Initial guess (zero by default).
    precond : operator, optional
        Right preconditioner ``M``; GMRES runs on ``A M`` and returns ``x = M y``.
    callback : callable, optional
        Called as ``callback(iteration, residual_estimate)``.

    Returns
    -------
    x : (n,) array
    stats : IterationStats
        Reaching ``max_iter`` is not an error; check ``stats.converged``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if restart < 1 or max_iter < 0:
        raise ValueError("restart must be >= 1 and max_iter >= 0")
    A = as_operator(op)
    M = as_operator(precond) if precond is not None else (lambda v: v)
    b = np.asarray(b, dtype=float).ravel()
    n = len(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float).ravel()
    if x.shape != b.shape:
        raise ValueError("x0 and b differ in shape")
    stats = IterationStats()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        x[:] = 0.0
        stats.final_residual = 0.0
        stats.converged = True
        return x, stats

    r = b - A(x)
    while True:
        beta = float(np.linalg.norm(r))
        if beta / bnorm <= tol or stats.iterations >= max_iter:
            break
        m = min(restart, max_iter - stats.iterations, n)
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        stats.cycle_starts.append(stats.iterations)
        k = 0
        for j in range(m):
            t0 = time.perf_counter()
            w = A(M(V[j]))
            wnorm0 = np.linalg.norm(w)
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            hn = np.linalg.norm(w)
            if hn > 0 and np.abs(V[:j + 1] @ w).max() > REORTH_THRESHOLD * hn:
                for i in range(j + 1):
                    c = V[i] @ w
                    H[i, j] += c
                    w -= c * V[i]
                hn = np.linalg.norm(w)
            breakdown = hn <= 1e-14 * max(wnorm0, 1e-300)
            H[j + 1, j] = 0.0 if breakdown else hn
            if not breakdown:
                V[j + 1] = w / hn
            for i in range(j):
                tmp = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = tmp
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            est = abs(g[j + 1]) / bnorm
            stats.iterations += 1
            stats.residual_history.append(est)
            stats.iteration_times.append(time.perf_counter() - t0)
            if callback is not None:
                callback(stats.iterations, est)
            if est <= tol or breakdown:
                break
        y = np.zeros(k)
        for i in range(k - 1, -1, -1):
            if H[i, i] != 0.0:
                y[i] = (g[i] - H[i, i + 1:k] @ y[i + 1:]) / H[i, i]
        x = x + M(V[:k].T @ y)
        r = b - A(x)
        if float(np.linalg.norm(r)) / bnorm <= tol or stats.iterations >= max_iter:
            break
        stats.restarts += 1

    stats.final_residual = _residual(A, b, x, bnorm)
    stats.converged = stats.final_residual <= tol
    return x, stats
