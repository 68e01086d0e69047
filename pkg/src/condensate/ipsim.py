"""Event-driven simulation of the inclusion process on the complete graph.

Each event draws a source site with probability ``u1(eta_i)/S1`` and a target
with probability ``u2(eta_j)/S2`` independently, after an exponential holding
time of rate ``S1*S2``. A draw with ``i == j`` is a recorded no-op, which is
exact in distribution because diagonal terms of the generator vanish.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels as K
from .configuration import Configuration, from_histogram
from .model import RateSpec, fixed_point_ybar

__all__ = [
    "Frozen",
    "InfeasibleInitial",
    "InitialCondition",
    "SimState",
    "Event",
    "ObservationSeries",
    "replica_seed",
    "make_rng",
    "init",
    "step",
    "run_observed",
    "integrated_fast_fraction",
]

OBSERVABLES = ("gamma", "y", "fast_fraction", "phi", "top", "fast_integral")


class Frozen(RuntimeError):
    """No particle can move: ``S1 * S2 == 0``."""


class InfeasibleInitial(ValueError):
    pass


@dataclass(frozen=True)
class InitialCondition:
    kind: str
    histogram: Optional[dict] = None

    KINDS = ("all-ones", "single-pile", "uniform-random", "histogram", "slow-equilibrium")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown initial condition {self.kind!r}; expected one of {self.KINDS}")
        if (self.kind == "histogram") != (self.histogram is not None):
            raise ValueError("a histogram is required exactly for kind='histogram'")

    @classmethod
    def all_ones(cls):
        return cls("all-ones")

    @classmethod
    def single_pile(cls):
        return cls("single-pile")

    @classmethod
    def uniform_random(cls):
        return cls("uniform-random")

    @classmethod
    def slow_equilibrium(cls):
        return cls("slow-equilibrium")

    @classmethod
    def from_histogram(cls, hist: dict):
        return cls("histogram", {int(k): int(v) for k, v in hist.items()})

    @classmethod
    def parse(cls, value) -> "InitialCondition":
        if isinstance(value, InitialCondition):
            return value
        if isinstance(value, dict):
            return cls.from_histogram(value)
        return cls(str(value).replace("_", "-").lower())

    def to_json(self):
        if self.kind == "histogram":
            return {str(k): v for k, v in sorted(self.histogram.items())}
        return self.kind

    def occupations(self, spec: RateSpec, L: int, N: int, rng: np.random.Generator) -> np.ndarray:
        if L < 1 or N < 0:
            raise InfeasibleInitial(f"need L >= 1 and N >= 0, got L={L}, N={N}")
        if self.kind == "all-ones":
            if N != L:
                raise InfeasibleInitial(f"all-ones needs N == L, got L={L}, N={N}")
            return np.ones(L, dtype=np.int64)
        if self.kind == "single-pile":
            eta = np.zeros(L, dtype=np.int64)
            eta[0] = N
            return eta
        if self.kind == "uniform-random":
            return np.bincount(rng.integers(0, L, size=N), minlength=L).astype(np.int64)
        if self.kind == "histogram":
            try:
                return from_histogram(self.histogram, L, N)
            except ValueError as exc:
                raise InfeasibleInitial(str(exc)) from None
        # slow-equilibrium: L-1 slow sites distributed like ybar, the rest on one pile
        A = spec.A
        if A == 0:
            eta = np.zeros(L, dtype=np.int64)
            eta[0] = N
            return eta
        ybar = fixed_point_ybar(spec)
        target = ybar * (L - 1)
        counts = np.floor(target).astype(np.int64)
        short = (L - 1) - counts.sum()
        order = np.argsort(-(target - counts), kind="stable")
        counts[order[:short]] += 1
        pile = N - int(counts @ np.arange(A + 1))
        if pile < 0:
            raise InfeasibleInitial(f"slow equilibrium needs {N - pile} particles, only N={N} available")
        eta = np.repeat(np.arange(A + 1, dtype=np.int64), counts)
        return np.concatenate([[pile], eta]).astype(np.int64)


def replica_seed(master_seed, index: int) -> np.random.SeedSequence:
    """Independent stream for replica ``index`` of a run seeded with ``master_seed``
    (an int or a sequence of ints)."""
    return np.random.SeedSequence(master_seed, spawn_key=(index,))


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class SimState:
    config: Configuration
    spec: RateSpec
    rng: np.random.Generator
    clock: float = 0.0
    stats: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))
    # time integral of the number of fast sites since t = 0
    fast_integral: np.ndarray = field(default_factory=lambda: np.zeros(1))

    @property
    def accepted(self) -> int:
        return int(self.stats[0])

    @property
    def rejected(self) -> int:
        return int(self.stats[1])

    @property
    def rejection_rate(self) -> float:
        total = self.stats.sum()
        return float(self.stats[1] / total) if total else 0.0

    def _kernel_args(self):
        c = self.config
        return (c.eta, c.A, c.s1, c.c1, c.s2, c.c2, c.members, c.mcount, c.pos, c.tree, c.tot)


@dataclass(frozen=True)
class Event:
    time: float
    holding: float
    source: int
    target: int

    @property
    def accepted(self) -> bool:
        return self.source != self.target


def init(spec: RateSpec, L: int, N: int, initial="single-pile", seed=None) -> SimState:
    rng = make_rng(seed)
    eta = InitialCondition.parse(initial).occupations(spec, L, N, rng)
    return SimState(Configuration(eta, spec), spec, rng)


def step(state: SimState) -> Event:
    fast_before = state.config.mcount[state.spec.A + 1]
    tau, i, j, status = K.step(state.rng, *state._kernel_args(), state.stats)
    if status == K.FROZEN:
        raise Frozen("no particle can move (S1 * S2 == 0)")
    state.fast_integral[0] += fast_before * tau
    state.clock += tau
    return Event(state.clock, tau, int(i), int(j))


@dataclass
class ObservationSeries:
    times: np.ndarray
    values: dict

    def columns(self) -> list:
        cols = []
        for name, v in self.values.items():
            if v.ndim == 1:
                cols.append((name, v))
            else:
                cols.extend((f"{name}_{k}", v[:, k]) for k in range(v.shape[1]))
        return cols

    def to_csv(self, schema_header: Optional[str] = None) -> str:
        cols = self.columns()
        lines = [] if schema_header is None else [schema_header]
        lines.append(",".join(["t"] + [c for c, _ in cols]))
        for r, t in enumerate(self.times):
            lines.append(",".join([repr(float(t))] + [repr(float(v[r])) for _, v in cols]))
        return "\n".join(lines) + "\n"


def _check_grid(grid, clock):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-d array")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if grid[0] < clock:
        raise ValueError(f"grid starts at {grid[0]} before the current clock {clock}")
    return grid


def run_observed(state: SimState, grid, observables: Sequence[str] = ("gamma", "y", "fast_fraction", "phi"),
                 mmax: int = 4, topk: int = 0) -> ObservationSeries:
    """Simulate to ``grid[-1]`` recording the state at every grid time."""
    grid = _check_grid(grid, state.clock)
    unknown = set(observables) - set(OBSERVABLES)
    if unknown:
        raise ValueError(f"unknown observables {sorted(unknown)}")
    if "top" in observables and topk < 1:
        topk = 5
    if "top" not in observables:
        topk = 0
    A = state.spec.A
    width = 1 + A + 1 + (mmax - 1) + topk
    out = np.zeros((grid.size, width))
    running = np.zeros(grid.size)
    eta, _, s1, c1, s2, c2, members, mcount, pos, tree, tot = state._kernel_args()
    # the running time average needs the accumulator at every grid time, so go point by point
    chunks = [grid[n:n + 1] for n in range(grid.size)] if "fast_integral" in observables else [grid]
    row = 0
    for chunk in chunks:
        clock, status = K.run_grid(chunk, state.clock, state.rng, eta, A, state.config.N, s1, c1, s2, c2,
                                   members, mcount, pos, tree, tot, state.stats, state.fast_integral,
                                   out[row:row + chunk.size], mmax, topk)
        if status == K.FROZEN:
            raise Frozen("no particle can move (S1 * S2 == 0)")
        state.clock = clock
        if chunk.size == 1:
            t = chunk[0]
            running[row] = state.fast_integral[0] / (state.config.L * t) if t > 0 else mcount[A + 1] / state.config.L
        row += chunk.size
    values = {}
    col = 0
    if "gamma" in observables:
        values["gamma_N"] = out[:, 0]
    col += 1
    if "y" in observables and A > 0:
        values["y"] = out[:, col:col + A]
    col += A
    if "fast_fraction" in observables:
        values["fast_fraction"] = out[:, col]
    col += 1
    if "phi" in observables:
        for m in range(2, mmax + 1):
            values[f"phi{m}"] = out[:, col]
            col += 1
    else:
        col += mmax - 1
    if topk:
        values["top"] = out[:, col:col + topk]
    if "fast_integral" in observables:
        values["fast_integral"] = running
    return ObservationSeries(grid, values)


def integrated_fast_fraction(state: SimState, T: float) -> float:
    """``(1/T) * int_0^T #_{>A}(t) / L dt``, accumulated exactly between events."""
    if not T > 0:
        raise ValueError("horizon must be positive")
    if state.clock < T:
        eta, A, s1, c1, s2, c2, members, mcount, pos, tree, tot = state._kernel_args()
        clock, status = K.run_until(T, state.clock, state.rng, eta, A, s1, c1, s2, c2, members, mcount,
                                    pos, tree, tot, state.stats, state.fast_integral)
        if status == K.FROZEN:
            raise Frozen("no particle can move (S1 * S2 == 0)")
        state.clock = clock
    elif state.clock > T:
        raise ValueError(f"state already advanced past T={T}")
    return float(state.fast_integral[0] / (state.config.L * T))
