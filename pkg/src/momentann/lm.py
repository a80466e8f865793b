"""Levenberg-Marquardt for small-parameter, many-residual least squares.

Works on the P x P normal equations, which is cheap when n >> P, with
Marquardt diagonal scaling and Nielsen's damping update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["LMResult", "levenberg_marquardt"]

# status codes
GRADIENT, STEP, FUNCTION, MAX_ITER, FAILED = 1, 2, 3, 0, -1


@dataclass
class LMResult:
    x: np.ndarray
    sse: float
    status: int
    iterations: int
    nfev: int

    @property
    def converged(self) -> bool:
        return self.status > 0


def levenberg_marquardt(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    gtol: float = 1e-8,
    xtol: float = 1e-8,
    ftol: float = 1e-8,
    max_iter: int = 500,
    tau: float = 1e-3,
) -> LMResult:
    """Minimise ``||residual(x)||^2``.

    Convergence tests:

    * gradient: the largest cosine between the residual vector and a Jacobian
      column is at most `gtol`;
    * step: ``||h|| <= xtol * (||x|| + xtol)``;
    * function: an accepted step reduces the SSE by a relative amount of at
      most `ftol`, and the linear model predicted no more than that.
    """
    x = np.array(x0, dtype=float)
    r = residual(x)
    nfev = 1
    sse = float(r @ r)
    if not math.isfinite(sse):
        return LMResult(x, sse, FAILED, 0, nfev)
    Jm = jacobian(x)
    A = Jm.T @ Jm
    g = Jm.T @ r
    mu = tau * max(float(np.max(np.diag(A))), 1e-300)
    nu = 2.0

    for it in range(1, max_iter + 1):
        colnorm = np.sqrt(np.diag(A))
        rnorm = math.sqrt(sse)
        if sse == 0.0:
            return LMResult(x, sse, GRADIENT, it - 1, nfev)
        with np.errstate(divide="ignore", invalid="ignore"):
            cos = np.where(colnorm > 0, np.abs(g) / (colnorm * rnorm), 0.0)
        if float(np.max(cos)) <= gtol:
            return LMResult(x, sse, GRADIENT, it - 1, nfev)

        d = np.maximum(np.diag(A), 1e-12 * max(float(np.max(np.diag(A))), 1e-300))
        while True:
            try:
                h = np.linalg.solve(A + mu * np.diag(d), -g)
            except np.linalg.LinAlgError:
                mu *= nu
                nu *= 2.0
                continue
            if np.linalg.norm(h) <= xtol * (np.linalg.norm(x) + xtol):
                return LMResult(x, sse, STEP, it, nfev)
            x_new = x + h
            r_new = residual(x_new)
            nfev += 1
            sse_new = float(r_new @ r_new)
            # predicted reduction of SSE by the damped linear model
            pred = float(h @ (mu * d * h - g))
            if math.isfinite(sse_new) and sse_new < sse and pred > 0:
                rho = (sse - sse_new) / pred
                small = (sse - sse_new) <= ftol * sse and pred <= ftol * sse
                x, r, sse = x_new, r_new, sse_new
                Jm = jacobian(x)
                A = Jm.T @ Jm
                g = Jm.T @ r
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                if small:
                    return LMResult(x, sse, FUNCTION, it, nfev)
                break
            mu *= nu
            nu *= 2.0
            if not math.isfinite(mu) or mu > 1e300:
                return LMResult(x, sse, FAILED, it, nfev)
    return LMResult(x, sse, MAX_ITER, max_iter, nfev)
