"""Poisson-Dirichlet samplers and the multi-locus Wright-Fisher approximation.

The Wright-Fisher part approximates ``z`` on ``K_{M-1}`` with generator

    sum_ij z_i (delta_ij - z_j) d_ij + beta_bar(y) sum_i ((1 - z_i)/(M-1) - z_i) d_i

driven by the deterministic control ``y``. There is no 1/2 in front of the
second-order term, so the noise covariance per unit time is
``2 (diag(z) - z z^T)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .configuration import EmbeddedState, KingmanVector
from .control import advance
from .ipsim import make_rng
from .model import ModelParams, as_control_state, beta_bar, gamma_of_y, theta_of_y

__all__ = [
    "PdSample",
    "default_truncation",
    "stick_break",
    "sample_pd_scaled",
    "pd_phi_samples",
    "pd_moment",
    "WfState",
    "wf_init",
    "wf_step",
    "project_Pi",
    "wf_phi",
    "WfResult",
    "simulate_wf",
]


@dataclass
class PdSample:
    v: np.ndarray
    x: KingmanVector
    residual: float


def default_truncation(theta: float, eps: float = 1e-10) -> int:
    """Sticks needed for an expected residual mass of ``eps``."""
    return max(1, math.ceil(math.log(eps) / math.log(theta / (1.0 + theta))))


def _sticks(U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # V_i = U_i prod_{j<i} (1 - U_j), along the last axis
    left = np.cumprod(1.0 - U, axis=-1)
    before = np.concatenate([np.ones(U.shape[:-1] + (1,)), left[..., :-1]], axis=-1)
    return U * before, left[..., -1]


def stick_break(theta: float, K: Optional[int] = None, rng=None, U=None) -> PdSample:
    """GEM(theta) weights from ``K`` Beta(1, theta) sticks, sorted into a Kingman vector.

    Passing ``U`` fixes the stick fractions (useful for checking the recursion).
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    if U is None:
        K = default_truncation(theta) if K is None else K
        if K < 1:
            raise ValueError("truncation K must be at least 1")
        U = make_rng(rng).beta(1.0, theta, size=K)
    U = np.asarray(U, dtype=float)
    v, residual = _sticks(U)
    return PdSample(v, KingmanVector(v), float(residual))


def sample_pd_scaled(theta: float, gamma_scale: float, K: Optional[int] = None, rng=None, U=None) -> PdSample:
    """A PD(theta) sample with every entry multiplied by ``gamma_scale``; zero for ``gamma_scale == 0``."""
    if not 0.0 <= gamma_scale <= 1.0:
        raise ValueError("gamma_scale must lie in [0, 1]")
    s = stick_break(theta, K, rng, U)
    return PdSample(s.v, KingmanVector(gamma_scale * s.x.values), gamma_scale * s.residual)


def pd_phi_samples(theta: float, gamma_scale: float, n: int, ms: Sequence[int] = (2, 3, 4),
                   K: Optional[int] = None, rng=None) -> np.ndarray:
    """``phi_m`` of ``n`` independent scaled PD samples, shape ``(n, len(ms))``."""
    K = default_truncation(theta) if K is None else K
    U = make_rng(rng).beta(1.0, theta, size=(n, K))
    v, _ = _sticks(U)
    v *= gamma_scale
    return np.stack([np.sum(v**m, axis=1) for m in ms], axis=1)


def pd_moment(m: int, theta: float, gamma_scale: float = 1.0) -> float:
    """``E[phi_m]`` under PD(theta) scaled by ``gamma_scale``."""
    if m < 2:
        raise ValueError("m must be at least 2")
    return gamma_scale**m * math.factorial(m - 1) / math.prod(theta + j for j in range(1, m))


# -- Wright-Fisher approximation ---------------------------------------------


@dataclass
class WfState:
    """``z_raw`` has shape ``(paths, M-1)``; the control ``y`` is shared by all paths.

    ``z_raw`` is the working Euler state and may leave ``K_{M-1}`` by a
    small signed excursion; :attr:`z` is its projection onto ``K_{M-1}``.
    """

    z_raw: np.ndarray
    y: np.ndarray
    M: int
    t: float = 0.0
    steps: int = 0
    projected: int = 0  # path-steps whose state needed the boundary projection

    @property
    def z(self) -> np.ndarray:
        return _project(self.z_raw)[0]

    @property
    def projection_fraction(self) -> float:
        n = self.steps * self.z_raw.shape[0]
        return self.projected / n if n else 0.0


def wf_init(params: ModelParams, M: int, y0, z0=None, paths: int = 1) -> WfState:
    """Paths started at ``z0`` (default: all mass on the first locus)."""
    if M < 2:
        raise ValueError("need at least M = 2 loci")
    y = as_control_state(y0, params.A).astype(float).copy()
    if z0 is None:
        z0 = np.zeros(M - 1)
        z0[0] = 1.0
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (M - 1,) or np.any(z0 < 0) or z0.sum() > 1 + 1e-12:
        raise ValueError("z0 must be a point of K_{M-1}")
    return WfState(np.tile(z0, (paths, 1)), y, M)


def _full(z: np.ndarray) -> np.ndarray:
    zM = np.maximum(1.0 - z.sum(axis=-1, keepdims=True), 0.0)
    return np.concatenate([z, zM], axis=-1)


def _noise_analytic(z: np.ndarray, rng) -> np.ndarray:
    # w = sqrt(zb) * xi - zb * <sqrt(zb), xi> has covariance diag(zb) - zb zb^T when sum(zb) = 1;
    # its first M-1 coordinates therefore have covariance diag(z) - z z^T
    zb = _full(np.maximum(z, 0.0))
    zb /= zb.sum(axis=-1, keepdims=True)
    s = np.sqrt(zb)
    xi = rng.standard_normal(zb.shape)
    w = s * xi - zb * np.sum(s * xi, axis=-1, keepdims=True)
    return w[..., :-1]


def _noise_cholesky(z: np.ndarray, rng, eps: float = 1e-14) -> np.ndarray:
    z = _full(np.maximum(z, 0.0))
    z = (z / z.sum(axis=-1, keepdims=True))[:, :-1]
    d = z.shape[-1]
    C = -z[:, :, None] * z[:, None, :]
    idx = np.arange(d)
    C[:, idx, idx] += z + eps
    B = np.linalg.cholesky(C)
    xi = rng.standard_normal(z.shape)
    return np.einsum("pij,pj->pi", B, xi)


def _project(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    neg = z < 0.0
    z = np.where(neg, 0.0, z)
    s = z.sum(axis=1)
    over = s > 1.0
    z[over] /= s[over, None]
    return z, neg.any(axis=1) | over


def wf_step(state: WfState, params: ModelParams, dt: float, rng, scheme: str = "multinomial",
            noise: str = "analytic", boundary: str = "truncate") -> WfState:
    """Advance ``z`` by ``dt`` with the chosen scheme, then ``y`` by one RK4 step.

    ``scheme="multinomial"`` applies the drift for ``dt`` and resamples
    ``n = 1/(2 dt)`` individuals, a discrete Wright-Fisher generation whose
    mean and covariance match the generator up to O(dt^2). It never leaves
    ``K_{M-1}``.

    ``scheme="euler"`` is Euler-Maruyama with noise factor ``noise``. With
    ``boundary="truncate"`` the noise is evaluated at the positive part of the
    state and the signed excursion is kept in ``z_raw``. ``boundary="clip"``
    projects the working state after every step; near a face with small
    per-locus drift this adds mass at a rate that does not vanish with ``dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    z, M = state.z_raw, state.M
    beta = float(beta_bar(params, state.y))
    if scheme == "multinomial":
        zb = _full(z)
        p = np.maximum(zb + beta * ((1.0 - zb) / (M - 1) - zb) * dt, 0.0)
        p /= p.sum(axis=1, keepdims=True)
        n = max(1, round(1.0 / (2.0 * dt)))
        z_new = (rng.multinomial(n, p) / n)[:, :-1]
        hit = np.zeros(z.shape[0], dtype=bool)
    elif scheme == "euler":
        if boundary not in ("truncate", "clip"):
            raise ValueError(f"unknown boundary policy {boundary!r}")
        drift = beta * ((1.0 - z) / (M - 1) - z)
        if noise == "analytic":
            w = _noise_analytic(z, rng)
        elif noise == "cholesky":
            w = _noise_cholesky(z, rng)
        else:
            raise ValueError(f"unknown noise factorization {noise!r}")
        z_new = z + drift * dt + math.sqrt(2.0 * dt) * w
        z_proj, hit = _project(z_new)
        if boundary == "clip":
            z_new = z_proj
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    y_new = advance(params, state.y, state.t, state.t + dt, dt) if params.A > 0 else state.y
    return WfState(z_new, y_new, M, state.t + dt, state.steps + 1, state.projected + int(hit.sum()))


def project_Pi(state: WfState, params: ModelParams, path: int = 0) -> EmbeddedState:
    """Append ``z_M``, sort descending and scale by ``gamma(y)``."""
    g = float(gamma_of_y(params, state.y))
    zb = _full(state.z[path : path + 1])[0]
    return EmbeddedState(KingmanVector(g * zb), state.y.copy())


def wf_phi(state: WfState, params: ModelParams, m: int) -> np.ndarray:
    """``phi_m`` of the projected state for every path."""
    g = float(gamma_of_y(params, state.y))
    return g**m * np.sum(_full(state.z) ** m, axis=1)


@dataclass
class WfResult:
    times: np.ndarray
    mean: dict
    se: dict
    gamma: np.ndarray
    theta: np.ndarray
    projection_fraction: float
    paths: int
    meta: dict = field(default_factory=dict)

    def to_csv(self, schema_header: Optional[str] = None) -> str:
        ms = sorted(self.mean)
        lines = [] if schema_header is None else [schema_header]
        head = ["t"] + [f"phi{m}_{s}" for m in ms for s in ("mean", "se")] + ["gamma", "theta"]
        lines.append(",".join(head))
        for n, t in enumerate(self.times):
            row = [t] + [v for m in ms for v in (self.mean[m][n], self.se[m][n])] + [self.gamma[n], self.theta[n]]
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def simulate_wf(params: ModelParams, M: int, y0, grid, dt: float = 1e-3, paths: int = 1000,
                seed=None, z0=None, ms: Sequence[int] = (2, 3), scheme: str = "multinomial",
                noise: str = "analytic", boundary: str = "truncate") -> WfResult:
    """Run ``paths`` independent WF paths and record mean and standard error of ``phi_m``.

    Grid points must be multiples of ``dt`` (up to rounding).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid[0] < 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be non-negative and strictly increasing")
    marks = np.rint(grid / dt).astype(np.int64)
    if np.any(np.abs(marks * dt - grid) > 1e-9 * max(1.0, grid[-1])):
        raise ValueError("grid points must be multiples of dt")
    rng = make_rng(seed)
    state = wf_init(params, M, y0, z0, paths)
    mean = {m: np.empty(grid.size) for m in ms}
    se = {m: np.empty(grid.size) for m in ms}
    gam = np.empty(grid.size)
    th = np.empty(grid.size)
    for n, mark in enumerate(marks):
        while state.steps < mark:
            state = wf_step(state, params, dt, rng, scheme, noise, boundary)
        for m in ms:
            v = wf_phi(state, params, m)
            mean[m][n] = v.mean()
            se[m][n] = v.std(ddof=1) / math.sqrt(paths) if paths > 1 else float("nan")
        gam[n] = float(gamma_of_y(params, state.y))
        th[n] = float(theta_of_y(params, state.y))
    return WfResult(grid, mean, se, gam, th, state.projection_fraction, paths,
                    {"M": M, "dt": dt, "scheme": scheme, "noise": noise, "boundary": boundary})
