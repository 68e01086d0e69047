"""Moment hierarchy of the modulated PD diffusion and checks of the drift assumptions.

A monomial ``phi_m = phi_{m_1} ... phi_{m_k}`` is stored as a sorted tuple of
exponents. The generator maps it to ``gamma * g(m) - a(theta, m) * phi_m``
where ``g(m)`` has degree ``deg(m) - 1`` and may contain ``phi_1`` factors.
Inside the hierarchy ``phi_1`` evaluates to ``gamma(t)``, the total mass of
the fast phase.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .configuration import KingmanVector
from .control import rk4_step
from .model import ModelParams, beta_bar, drift_b, gamma_of_y, theta_of_y

__all__ = [
    "MonomialIndex",
    "act_on_monomial",
    "generator_on_monomial",
    "generator_fd",
    "MomentSystem",
    "MomentTable",
    "solve_hierarchy",
    "ItemResult",
    "AssumptionReport",
    "validate_assumption_2_1",
]


def MonomialIndex(exponents: Sequence[int]) -> tuple:
    """Canonical (sorted) exponent tuple; every exponent at least 2."""
    m = tuple(sorted(int(e) for e in exponents))
    if any(e < 2 for e in m):
        raise ValueError(f"exponents must be >= 2, got {m}")
    return m


def label(m: tuple) -> str:
    return "*".join(f"phi{e}" for e in m) if m else "1"


def act_on_monomial(m: tuple):
    """Return ``(g, a0, a1)``: ``g`` maps exponent tuples (``1`` allowed) to
    coefficients and ``a(theta, m) = a0 + a1 * theta``."""
    m = tuple(m)
    g = defaultdict(float)
    k = len(m)
    for l in range(k):
        rest = m[:l] + m[l + 1:]
        g[tuple(sorted(rest + (m[l] - 1,)))] += m[l] * (m[l] - 1)
    for l in range(k):
        for lp in range(k):
            if l == lp:
                continue
            rest = tuple(m[i] for i in range(k) if i not in (l, lp))
            g[tuple(sorted(rest + (m[l] + m[lp] - 1,)))] += m[l] * m[lp]
    a0 = sum(e * (e - 1) for e in m) + sum(m[l] * m[lp] for l in range(k) for lp in range(k) if l != lp)
    a1 = sum(m)
    return dict(g), float(a0), float(a1)


def _phi(x, e):
    return np.sum(np.asarray(x, dtype=float) ** e)


def _mono(x, m):
    return math.prod(_phi(x, e) for e in m)


def generator_on_monomial(m: tuple, x, gamma: float, theta: float) -> float:
    """``A_{gamma,theta} phi_m (x)`` from the monomial decomposition, ``phi_1`` read off ``x``."""
    g, a0, a1 = act_on_monomial(m)
    gx = sum(c * _mono(x, key) for key, c in g.items())
    return gamma * gx - (a0 + a1 * theta) * _mono(x, m)


def generator_fd(f: Callable, x, gamma: float, theta: float, h: float = 1e-3) -> float:
    """``sum_ij x_i (gamma delta_ij - x_j) d_ij f - theta sum_i x_i d_i f`` by fourth-order central differences."""
    x = np.asarray(x, dtype=float)
    n = x.size
    E = np.eye(n) * h

    def d1(i):
        return (-f(x + 2 * E[i]) + 8 * f(x + E[i]) - 8 * f(x - E[i]) + f(x - 2 * E[i])) / (12 * h)

    def d2(i, j):
        if i == j:
            return (-f(x + 2 * E[i]) + 16 * f(x + E[i]) - 30 * f(x) + 16 * f(x - E[i]) - f(x - 2 * E[i])) / (12 * h * h)
        s = 0.0
        for a, wa in ((1, 8), (-1, -8), (2, -1), (-2, 1)):
            for b, wb in ((1, 8), (-1, -8), (2, -1), (-2, 1)):
                s += wa * wb * f(x + a * E[i] + b * E[j])
        return s / (144 * h * h)

    out = 0.0
    for i in range(n):
        out -= theta * x[i] * d1(i)
        for j in range(n):
            out += x[i] * (gamma * (i == j) - x[j]) * d2(i, j)
    return out


def _partitions(n: int, smallest: int = 2):
    """Non-decreasing tuples of parts >= ``smallest`` summing to exactly ``n``."""
    if n == 0:
        yield ()
        return
    for p in range(smallest, n + 1):
        for rest in _partitions(n - p, p):
            yield (p,) + rest


@dataclass
class MomentSystem:
    """All monomials of degree ``2..n_max`` with their generator decomposition.

    ``terms[i]`` lists ``(j, coeff, ones)``: monomial ``i`` receives
    ``coeff * gamma^ones * E[phi_{index j}]`` in ``g``; ``j = -1`` stands for
    the constant 1.
    """

    n_max: int = 6
    indices: list = field(init=False)
    terms: list = field(init=False)
    a: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.n_max < 2:
            raise ValueError("n_max must be at least 2")
        self.indices = [m for d in range(2, self.n_max + 1) for m in _partitions(d)]
        pos = {m: i for i, m in enumerate(self.indices)}
        self.terms = []
        self.a = np.empty((len(self.indices), 2))
        for i, m in enumerate(self.indices):
            g, a0, a1 = act_on_monomial(m)
            row = []
            for key, c in g.items():
                ones = sum(1 for e in key if e == 1)
                rest = tuple(e for e in key if e > 1)
                if sum(key) >= sum(m):
                    raise AssertionError(f"hierarchy not triangular at {m}")
                row.append((pos[rest] if rest else -1, c, ones))
            self.terms.append(row)
            self.a[i] = (a0, a1)

    @property
    def labels(self) -> list:
        return [label(m) for m in self.indices]

    def index_of(self, m) -> int:
        return self.indices.index(MonomialIndex(m))

    def rhs(self, mu: np.ndarray, gamma: float, theta: float) -> np.ndarray:
        out = -(self.a[:, 0] + self.a[:, 1] * theta) * mu
        for i, row in enumerate(self.terms):
            s = 0.0
            for j, c, ones in row:
                s += c * gamma**ones * (1.0 if j < 0 else mu[j])
            out[i] += gamma * s
        return out

    def initial(self, x0) -> np.ndarray:
        v = x0.values if isinstance(x0, KingmanVector) else np.asarray(x0, dtype=float)
        return np.array([_mono(v, m) for m in self.indices])


@dataclass
class MomentTable:
    times: np.ndarray
    labels: list
    values: np.ndarray  # (len(times), len(labels))

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.labels.index(name)]

    def to_csv(self, schema_header: Optional[str] = None) -> str:
        lines = [] if schema_header is None else [schema_header]
        lines.append(",".join(["t"] + self.labels))
        for n, t in enumerate(self.times):
            lines.append(",".join(repr(float(v)) for v in [t, *self.values[n]]))
        return "\n".join(lines) + "\n"


def solve_hierarchy(system: MomentSystem, gamma_t: Callable, theta_t: Callable, x0, grid, h: float = 1e-3) -> MomentTable:
    """RK4 integration of ``d mu(phi_m)/dt = gamma(t) mu(g(m)) - a(theta(t), m) mu(phi_m)``.

    ``gamma_t`` and ``theta_t`` may be callables or constants.
    """
    gf = gamma_t if callable(gamma_t) else (lambda t, c=float(gamma_t): c)
    tf = theta_t if callable(theta_t) else (lambda t, c=float(theta_t): c)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid[0] < 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be non-negative and strictly increasing")
    f = lambda t, mu: system.rhs(mu, gf(t), tf(t))
    mu = system.initial(x0)
    out = np.empty((grid.size, mu.size))
    t = 0.0
    for n, tn in enumerate(grid):
        steps = math.ceil((tn - t) / h - 1e-12)
        if steps > 0:
            dt = (tn - t) / steps
            for _ in range(steps):
                mu = rk4_step(f, t, mu, dt)
                t += dt
        t = tn
        out[n] = mu
    return MomentTable(grid, system.labels, out)


# -- Assumption checks on the control drift -----------------------------------


@dataclass
class ItemResult:
    passed: bool
    worst: float
    witness: Optional[np.ndarray] = None
    note: str = ""


@dataclass
class AssumptionReport:
    items: dict

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.items.values())

    def lines(self) -> list:
        out = []
        for name, r in self.items.items():
            w = "" if r.witness is None else f" witness={np.round(r.witness, 6).tolist()}"
            out.append(f"{name}: {'pass' if r.passed else 'FAIL'} worst={r.worst:.3g}{w} {r.note}".rstrip())
        return out


def _sample_SY(A: int, resolution: float, rng, n_random: int = 100_000) -> np.ndarray:
    """Lattice of S_Y with spacing ``resolution`` for A <= 2, random points otherwise."""
    if A == 1:
        return np.linspace(0.0, 1.0, int(round(1 / resolution)) + 1)[:, None]
    if A == 2:
        k = int(round(1 / resolution))
        i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
        keep = i + j <= k
        return np.stack([i[keep], j[keep]], axis=1) / k
    return rng.dirichlet(np.ones(A + 1), size=n_random)[:, :A]


def validate_assumption_2_1(params: ModelParams, drift: Optional[Callable] = None, resolution: float = 1e-3,
                            tol: float = 1e-12, seed=0) -> AssumptionReport:
    """Numerical checks of the drift assumptions on a dense sample of S_Y.

    (a) ``b`` vanishes where ``gamma = 0``; (b) ``b_k >= 0`` on ``{y_k = 0}``
    and ``sum_k b_k <= 0`` on ``{sum y = 1}``; (c) ``gamma`` and ``theta``
    have finite sampled Lipschitz quotients; (d) ``beta >= 0`` and
    ``beta = r_A y_A`` where ``gamma > 0``. ``drift`` overrides ``b``.
    """
    A = params.A
    if A < 1:
        raise ValueError("the control space is trivial for A = 0")
    b = drift if drift is not None else (lambda y: drift_b(params, y))
    rng = np.random.default_rng(seed)
    Y = _sample_SY(A, resolution, rng)
    B = b(Y)
    G = np.asarray(gamma_of_y(params, Y))
    items = {}

    # (a)
    dead = G <= 0
    if dead.any():
        err = np.max(np.abs(B[dead]), axis=1)
        i = int(np.argmax(err))
        items["a_absorbing"] = ItemResult(bool(err[i] <= tol), float(err[i]), Y[dead][i])
    else:
        items["a_absorbing"] = ItemResult(True, 0.0, None, "gamma > 0 on all of S_Y")

    # (b) faces y_k = 0 and the face sum(y) = 1
    worst, wit = 0.0, None
    for k in range(A):
        face = Y.copy()
        face[:, k] = 0.0
        bk = b(face)[:, k]
        i = int(np.argmin(bk))
        if -bk[i] > worst:
            worst, wit = float(-bk[i]), face[i]
    top = Y / np.maximum(Y.sum(axis=1, keepdims=True), 1e-300)
    top = top[Y.sum(axis=1) > 0]
    s = b(top).sum(axis=1)
    i = int(np.argmax(s))
    if s[i] > worst:
        worst, wit = float(s[i]), top[i]
    items["b_boundary"] = ItemResult(worst <= tol, worst, wit)

    # (c)
    i1 = rng.integers(0, len(Y), 20_000)
    i2 = rng.integers(0, len(Y), 20_000)
    dist = np.linalg.norm(Y[i1] - Y[i2], axis=1)
    ok = dist > 0
    lg = np.max(np.abs(G[i1] - G[i2])[ok] / dist[ok])
    T = theta_of_y(params, Y)
    lt = np.max(np.abs(T[i1] - T[i2])[ok] / dist[ok])
    worst = float(max(lg, lt))
    items["c_lipschitz"] = ItemResult(bool(np.isfinite(worst)), worst, None, f"L_gamma~{lg:.3g} L_theta~{lt:.3g}")

    # (d)
    live = G > 0
    Yl, Gl = Y[live], G[live]
    beta = theta_of_y(params, Yl) + (b(Yl) @ ((A - np.arange(A)) / params.rho)) / Gl
    target = beta_bar(params, Yl)
    err = np.maximum(np.abs(beta - target), np.maximum(-beta, 0.0))
    i = int(np.argmax(err)) if err.size else 0
    worst = float(err[i]) if err.size else 0.0
    items["d_beta"] = ItemResult(worst <= 1e-9, worst, Yl[i] if err.size else None)
    return AssumptionReport(items)
