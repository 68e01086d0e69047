"""Particle configurations, the embedding into the limit space, and observables."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from .model import RateSpec, u1, u2

__all__ = [
    "ZeroRate",
    "BoundViolation",
    "KingmanVector",
    "EmbeddedState",
    "Configuration",
    "embed",
    "gamma_N",
    "phi_m",
    "total_rate_c",
    "up_probability_p",
    "diagonal_mass",
    "CouplingReport",
    "check_coupling_bounds",
]


class ZeroRate(ValueError):
    pass


class BoundViolation(AssertionError):
    def __init__(self, message, config=None, report=None):
        super().__init__(message)
        self.config = config
        self.report = report


class KingmanVector:
    """Descending, finitely supported point of the closed Kingman simplex.

    Only nonzero entries are stored; comparisons ignore trailing zeros.
    """

    __slots__ = ("values",)

    def __init__(self, values=(), tol: float = 1e-12):
        v = np.asarray(values, dtype=float).ravel()
        if np.any(v < 0):
            raise ValueError("Kingman vector entries must be non-negative")
        v = np.sort(v[v > 0])[::-1]
        if v.sum() > 1 + tol:
            raise ValueError(f"Kingman vector mass {v.sum()} exceeds 1")
        self.values = v

    @property
    def support(self) -> int:
        return self.values.size

    def total(self) -> float:
        return float(self.values.sum())

    def phi(self, m: int) -> float:
        return phi_m(self, m)

    def __len__(self):
        return self.values.size

    def __getitem__(self, i):
        return self.values[i]

    def __eq__(self, other):
        if not isinstance(other, KingmanVector):
            other = KingmanVector(other)
        return self.values.shape == other.values.shape and bool(np.all(self.values == other.values))

    def isclose(self, other, atol=1e-12) -> bool:
        other = other if isinstance(other, KingmanVector) else KingmanVector(other)
        n = max(self.support, other.support)
        a = np.zeros(n)
        b = np.zeros(n)
        a[: self.support] = self.values
        b[: other.support] = other.values
        return bool(np.allclose(a, b, rtol=0, atol=atol))

    def __repr__(self):
        return f"KingmanVector({self.values.tolist()})"


@dataclass
class EmbeddedState:
    x: KingmanVector
    y: np.ndarray


class Configuration:
    """Occupation vector with cached category counts and a fast-site index.

    Moves are applied through :meth:`move`, which updates every cache in
    O(log L). :meth:`validate` recounts from scratch.
    """

    def __init__(self, occupations, spec: RateSpec):
        eta = np.array(occupations, dtype=np.int64)
        if eta.ndim != 1 or eta.size == 0:
            raise ValueError("occupations must be a non-empty 1-d sequence")
        if np.any(eta < 0):
            raise ValueError("occupations must be non-negative")
        self.spec = spec
        self.eta = eta
        self.L = eta.size
        self.N = int(eta.sum())
        A = spec.A
        self.members = np.zeros((A + 2, self.L), dtype=np.int64)
        self.mcount = np.zeros(A + 2, dtype=np.int64)
        self.pos = np.zeros(self.L, dtype=np.int64)
        self.tree = np.zeros(self.L + 1, dtype=np.int64)
        self.tot = np.zeros(1, dtype=np.int64)
        self.s1, self.s2 = spec.slow_rates(self.L)
        self.c1, self.c2 = spec.fast_offsets(self.L)
        K.build(self.eta, A, self.members, self.mcount, self.pos, self.tree, self.tot)

    @property
    def A(self) -> int:
        return self.spec.A

    @property
    def occupations(self) -> np.ndarray:
        return self.eta.copy()

    @property
    def counts(self) -> np.ndarray:
        """``#_0, ..., #_A, #_{>A}``."""
        return self.mcount.copy()

    @property
    def fast_count(self) -> int:
        return int(self.mcount[self.A + 1])

    @property
    def total_excess(self) -> int:
        return int(self.tot[0])

    @property
    def agg1(self) -> float:
        return K.aggregate(self.s1, self.c1, self.A, self.mcount, self.tot)

    @property
    def agg2(self) -> float:
        return K.aggregate(self.s2, self.c2, self.A, self.mcount, self.tot)

    def fast_sites(self) -> np.ndarray:
        return self.members[self.A + 1, : self.fast_count].copy()

    def move(self, i: int, j: int):
        if self.eta[i] == 0:
            raise ValueError(f"site {i} is empty")
        if i != j:
            K.move(i, j, self.eta, self.A, self.members, self.mcount, self.pos, self.tree, self.tot)

    def copy(self) -> "Configuration":
        return Configuration(self.eta, self.spec)

    def validate(self):
        """Recount every cache and compare; raises AssertionError on mismatch."""
        A, eta = self.A, self.eta
        assert eta.sum() == self.N, "particle number changed"
        cats = np.minimum(eta, A + 1)
        assert np.array_equal(np.bincount(cats, minlength=A + 2), self.mcount), "category counts stale"
        for c in range(A + 2):
            listed = self.members[c, : self.mcount[c]]
            assert np.all(cats[listed] == c), f"member list {c} stale"
            assert np.all(self.pos[listed] == np.arange(listed.size)), f"positions in list {c} stale"
        excess = np.maximum(eta - A, 0)
        assert self.tot[0] == excess.sum(), "total excess stale"
        prefix = np.array([K.fenwick_find(self.tree, t) for t in range(min(int(excess.sum()), 64))])
        expect = np.repeat(np.arange(self.L), excess)[: prefix.size]
        assert np.array_equal(prefix, expect), "fenwick tree stale"
        assert np.isclose(self.agg1, u1(self.spec, self.L, eta).sum(), rtol=1e-12, atol=1e-12)
        assert np.isclose(self.agg2, u2(self.spec, self.L, eta).sum(), rtol=1e-12, atol=1e-12)

    # -- serialization: occupation histogram ------------------------------
    def histogram(self) -> dict:
        ks, cs = np.unique(self.eta, return_counts=True)
        return {int(k): int(c) for k, c in zip(ks, cs)}

    def dumps(self) -> str:
        hist = [[k, c] for k, c in sorted(self.histogram().items())]
        return json.dumps({"L": self.L, "N": self.N, "histogram": hist}) + "\n"

    @classmethod
    def loads(cls, text: str, spec: RateSpec) -> "Configuration":
        d = json.loads(text)
        hist = {int(k): int(c) for k, c in d["histogram"]}
        eta = from_histogram(hist, int(d["L"]), int(d["N"]))
        return cls(eta, spec)

    def __repr__(self):
        return f"Configuration(L={self.L}, N={self.N}, counts={self.mcount.tolist()})"


def from_histogram(hist: dict, L: int, N: int) -> np.ndarray:
    """Occupations in descending order from a ``{k: count}`` histogram."""
    if sum(hist.values()) != L or sum(k * c for k, c in hist.items()) != N:
        raise ValueError(f"histogram {hist} does not describe L={L} sites with N={N} particles")
    ks = sorted(hist, reverse=True)
    return np.repeat(np.array(ks, dtype=np.int64), [hist[k] for k in ks])


def _occupations(eta) -> np.ndarray:
    if isinstance(eta, Configuration):
        return eta.eta
    return np.asarray(eta, dtype=np.int64)


def embed(eta, spec: RateSpec) -> EmbeddedState:
    """``(sorted (eta_i - A)_+ / N, (#_0, ..., #_{A-1}) / L)``."""
    occ = _occupations(eta)
    N, L, A = occ.sum(), occ.size, spec.A
    x = KingmanVector(np.maximum(occ - A, 0) / N)
    y = np.bincount(np.minimum(occ, A), minlength=A + 1)[:A] / L
    return EmbeddedState(x, y)


def gamma_N(eta, spec: RateSpec) -> float:
    """Fraction of particles above the threshold."""
    if isinstance(eta, Configuration):
        return eta.total_excess / eta.N
    occ = _occupations(eta)
    return float(np.maximum(occ - spec.A, 0).sum() / occ.sum())


def phi_m(x, m: int) -> float:
    if m < 2:
        raise ValueError("phi_m is defined here for m >= 2")
    v = x.values if isinstance(x, KingmanVector) else np.asarray(x, dtype=float)
    return float(np.sum(v**m))


def _site_rates(eta, spec, site):
    if isinstance(eta, Configuration):
        conf = eta
    else:
        conf = Configuration(eta, spec)
    n = int(conf.eta[site])
    a1 = float(u1(spec, conf.L, n))
    a2 = float(u2(spec, conf.L, n))
    rest1 = conf.agg1 - a1
    rest2 = conf.agg2 - a2
    return a1, a2, max(rest1, 0.0), max(rest2, 0.0)


def total_rate_c(eta, spec: RateSpec, site: int = 0) -> float:
    """Total jump rate of the walk performed by the occupation of ``site``."""
    a1, a2, rest1, rest2 = _site_rates(eta, spec, site)
    return a1 * rest2 + a2 * rest1


def up_probability_p(eta, spec: RateSpec, site: int = 0) -> float:
    """Probability that the next jump touching ``site`` brings a particle in."""
    a1, a2, rest1, rest2 = _site_rates(eta, spec, site)
    c = a1 * rest2 + a2 * rest1
    if c <= 0:
        raise ZeroRate(f"site {site} cannot change: c(eta) = 0")
    return a2 * rest1 / c


def diagonal_mass(eta, spec: RateSpec) -> float:
    """``sum_i u1(eta_i) u2(eta_i)``: rate of rejected self-moves."""
    occ = _occupations(eta)
    L = occ.size
    return float(np.sum(u1(spec, L, occ) * u2(spec, L, occ)))


@dataclass
class CouplingReport:
    branch: str
    p: Optional[float]
    c: float
    p_bound: Optional[float]
    c_lower: Optional[float]
    c_upper: Optional[float]

    @property
    def p_slack(self):
        return None if self.p_bound is None else self.p_bound - self.p

    @property
    def c_slack(self):
        if self.c_lower is not None:
            return self.c - self.c_lower
        if self.c_upper is not None:
            return self.c_upper - self.c
        return None

    @property
    def ok(self) -> bool:
        return all(s is None or s >= 0 for s in (self.p_slack, self.c_slack))


def check_coupling_bounds(eta, spec: RateSpec, delta: float, site: int = 0, raise_on_violation: bool = True) -> CouplingReport:
    """Rate inequalities used to bound excursions of a single site above ``A``.

    For ``eta_site > A`` and ``gamma_N > delta``: ``p <= 1/2 + 15 zeta_L`` and
    ``c >= a L`` with ``a = N/(4L) min(q_min, 1) delta``. For ``eta_site <= A``:
    ``c <= 4 rho (r_max + 1)``. Otherwise nothing is asserted.
    """
    conf = eta if isinstance(eta, Configuration) else Configuration(eta, spec)
    L, N, A = conf.L, conf.N, spec.A
    zeta = spec.zeta(L)
    if zeta > 1 / 3:
        raise ValueError(f"L={L} too small: zeta_L = {zeta} > 1/3")
    c = total_rate_c(conf, spec, site)
    n = int(conf.eta[site])
    if n > A:
        if gamma_N(conf, spec) <= delta:
            report = CouplingReport("vacuous", None, c, None, None, None)
        else:
            qmin = min(spec.q_min, 1.0) if A > 0 else 1.0
            a = N / (4 * L) * qmin * delta
            p = up_probability_p(conf, spec, site) if c > 0 else 0.0
            report = CouplingReport("fast", p, c, 0.5 + 15 * zeta, a * L, None)
    else:
        rho = N / L
        report = CouplingReport("slow", None, c, None, None, 4 * rho * (spec.r_max + 1))
    if raise_on_violation and not report.ok:
        raise BoundViolation(f"rate bound violated: {report}", config=conf.occupations, report=report)
    return report
