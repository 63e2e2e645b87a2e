"""BFGS with Armijo backtracking, run in diagonally scaled coordinates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class InvalidStartError(ValueError):
    """Objective or gradient is not finite at the starting point."""


@dataclass(frozen=True)
class OptimOptions:
    max_iters: int = 200
    grad_tol: float = 1e-7
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 40
    scaling: np.ndarray | None = None

    def __post_init__(self):
        if not 0 < self.armijo_c1 < 1:
            raise ValueError("armijo_c1 must lie in (0, 1)")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    history: list


def bfgs_minimize(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray] | None,
    x0,
    opts: OptimOptions | None = None,
    fun_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None,
) -> OptimResult:
    """Minimize ``objective`` from ``x0``.

    Either ``objective``/``gradient`` or a combined ``fun_and_grad`` may be
    supplied. The search runs on ``x / scaling``; the stopping test is the
    infinity norm of the scaled gradient. A failed line search returns the
    best iterate with ``converged=False``.
    """
    opts = opts or OptimOptions()
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    scale = np.ones(n) if opts.scaling is None else np.asarray(opts.scaling, dtype=float)
    if scale.shape != (n,) or np.any(scale <= 0):
        raise ValueError("scaling must be positive with one entry per coordinate")

    if fun_and_grad is None:
        def fun_and_grad(x):
            return objective(x), gradient(x)

    def fg(z):
        f, g = fun_and_grad(z * scale)
        return float(f), np.asarray(g, dtype=float) * scale

    z = x0 / scale
    try:
        f, g = fg(z)
    except (ArithmeticError, ValueError) as exc:
        raise InvalidStartError(str(exc)) from exc
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise InvalidStartError("objective or gradient not finite at x0")

    Hinv = np.eye(n)
    first_update = True
    history = [f]
    converged = False
    it = 0
    while it < opts.max_iters:
        if np.max(np.abs(g)) <= opts.grad_tol:
            converged = True
            break
        p = -Hinv @ g
        slope = float(g @ p)
        if slope >= 0:  # lost descent; restart from steepest descent
            Hinv = np.eye(n)
            first_update = True
            p = -g
            slope = float(g @ p)
        step = 1.0
        accepted = False
        for _ in range(opts.max_backtracks):
            z_new = z + step * p
            try:
                f_new, g_new = fg(z_new)
            except (ArithmeticError, ValueError):
                f_new, g_new = np.inf, None
            # strict decrease also rejects steps lost in rounding at the precision floor
            if np.isfinite(f_new) and f_new <= f + opts.armijo_c1 * step * slope and f_new < f:
                accepted = True
                break
            step *= opts.backtrack_factor
        if not accepted or not np.all(np.isfinite(g_new)):
            if first_update:
                break
            # retry once from steepest descent before giving up
            Hinv = np.eye(n)
            first_update = True
            continue
        s = z_new - z
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if first_update:
                Hinv = np.eye(n) * (sy / float(y @ y))
                first_update = False
            rho = 1.0 / sy
            Hy = Hinv @ y
            Hinv = Hinv + ((sy + y @ Hy) * rho * rho) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))
            Hinv = 0.5 * (Hinv + Hinv.T)
        z, f, g = z_new, f_new, g_new
        history.append(f)
        it += 1
    else:
        converged = bool(np.max(np.abs(g)) <= opts.grad_tol)
    return OptimResult(z * scale, f, it, converged, history)


def finite_diff_gradient(objective: Callable[[np.ndarray], float], x, relative_step: float = 1e-6) -> np.ndarray:
    """Central differences with step ``relative_step * max(1, |x_k|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        h = relative_step * max(1.0, abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (objective(xp) - objective(xm)) / (2.0 * h)
    return g
