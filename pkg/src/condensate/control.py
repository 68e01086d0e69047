"""Fixed-step RK4 integration of the control system ``dY/dt = b(Y)`` on S_Y."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import ModelParams, as_control_state, drift_b, gamma_of_y, theta_of_y

__all__ = [
    "StepRejected",
    "OdeSolution",
    "LongTimeResult",
    "rk4_step",
    "simplex_violation",
    "project_simplex",
    "integrate",
    "integrate_fixed",
    "advance",
    "long_time_gamma",
    "control_drivers",
]

CLAMP_BUDGET = 1e-9


class StepRejected(RuntimeError):
    """A step left S_Y by more than the clamping budget."""


@dataclass
class OdeSolution:
    times: np.ndarray
    states: np.ndarray
    gamma_track: np.ndarray
    theta_track: np.ndarray
    h: float

    def to_csv(self, schema_header: Optional[str] = None) -> str:
        A = self.states.shape[1]
        lines = [] if schema_header is None else [schema_header]
        lines.append(",".join(["t"] + [f"y_{k}" for k in range(A)] + ["gamma", "theta"]))
        for n, t in enumerate(self.times):
            row = [t, *self.states[n], self.gamma_track[n], self.theta_track[n]]
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def rk4_step(f: Callable, t: float, y, h: float):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def simplex_violation(y) -> float:
    y = np.asarray(y)
    if y.size == 0:
        return 0.0
    return float(max(-y.min(), y.max() - 1.0, y.sum() - 1.0, 0.0))


def project_simplex(y) -> np.ndarray:
    y = np.clip(y, 0.0, 1.0)
    s = y.sum()
    return y / s if s > 1.0 else y


def advance(params: ModelParams, y, t0: float, t1: float, h: float):
    n = max(1, math.ceil((t1 - t0) / h - 1e-12))
    dt = (t1 - t0) / n
    f = lambda t, z: drift_b(params, z)
    t = t0
    for _ in range(n):
        y = rk4_step(f, t, y, dt)
        t += dt
        v = simplex_violation(y)
        if v > CLAMP_BUDGET:
            raise StepRejected(f"state left S_Y by {v:.3g} at t={t:.6g}")
        if v > 0:
            y = project_simplex(y)
    return y


def integrate_fixed(params: ModelParams, y0, grid, h: float) -> OdeSolution:
    """RK4 with substep at most ``h`` between consecutive grid points."""
    y = as_control_state(y0, params.A).astype(float).copy()
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    states = np.empty((grid.size, params.A))
    states[0] = y
    for n in range(1, grid.size):
        y = advance(params, y, grid[n - 1], grid[n], h)
        states[n] = y
    return OdeSolution(grid, states, np.asarray(gamma_of_y(params, states)),
                       np.asarray(theta_of_y(params, states)), h)


def integrate(params: ModelParams, y0, grid, h: float = 0.05, tol: float = 1e-10, h_min: float = 1e-6) -> OdeSolution:
    """RK4 on ``grid``; the substep is halved until halving changes the endpoint by less than ``tol``.

    Returns the solution computed with the finer of the last two substeps.
    """
    coarse = integrate_fixed(params, y0, grid, h)
    while True:
        h /= 2
        fine = integrate_fixed(params, y0, grid, h)
        if np.max(np.abs(fine.states[-1] - coarse.states[-1]), initial=0.0) < tol:
            return fine
        if h < h_min:
            raise StepRejected(f"no step size above {h_min} reached endpoint tolerance {tol}")
        coarse = fine


@dataclass
class LongTimeResult:
    gamma: float
    converged: bool
    t_end: float
    y_end: np.ndarray
    drift_norm: float

    def __float__(self):
        return self.gamma


def long_time_gamma(params: ModelParams, y0, horizon: float = 1e4, tol: float = 1e-12, h: float = 0.01) -> LongTimeResult:
    """Integrate until ``max|b(Y)| < tol`` or ``horizon``; report ``gamma(Y(end))``.

    Not reaching the tolerance is flagged with ``converged=False``.
    """
    y = as_control_state(y0, params.A).astype(float).copy()
    t = 0.0
    while True:
        bnorm = float(np.max(np.abs(drift_b(params, y)), initial=0.0))
        if bnorm < tol or t >= horizon:
            return LongTimeResult(float(gamma_of_y(params, y)), bnorm < tol, t, y, bnorm)
        t1 = min(t + 1.0, horizon)
        y = advance(params, y, t, t1, h)
        t = t1


def control_drivers(params: ModelParams, y0, t_end: float, h: float = 1e-3):
    """``gamma(Y(t))`` and ``theta(Y(t))`` as callables on ``[0, t_end]``.

    Y is integrated with RK4 at step ``h`` and interpolated by cubic Hermite
    polynomials using ``b(Y)`` as the derivative, which keeps the interpolant
    at the same order as the integrator.
    """
    n = max(1, math.ceil(t_end / h))
    sol = integrate_fixed(params, y0, np.linspace(0.0, t_end, n + 1), h)
    ts, ys = sol.times, sol.states
    dys = drift_b(params, ys)
    dt = ts[1] - ts[0]

    def Y(t):
        t = min(max(float(t), 0.0), t_end)
        i = min(int(t / dt), n - 1)
        s = (t - ts[i]) / dt
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * ys[i] + h10 * dt * dys[i] + h01 * ys[i + 1] + h11 * dt * dys[i + 1]

    def gamma_t(t):
        return float(gamma_of_y(params, Y(t)))

    def theta_t(t):
        return float(theta_of_y(params, Y(t)))

    return gamma_t, theta_t
