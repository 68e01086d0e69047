"""Experiment configuration, replica execution, aggregation and file output."""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .control import control_drivers, integrate
from .ipsim import InitialCondition, init, make_rng, replica_seed, run_observed
from .model import ModelParams, RateSpec, gamma_closed_form_A1
from .moments import MomentSystem, solve_hierarchy
from .pd import pd_moment, pd_phi_samples, simulate_wf

__all__ = [
    "SCHEMA",
    "CSV_HEADER",
    "ConfigError",
    "GridMismatch",
    "ReplicaError",
    "ExperimentConfig",
    "RunResult",
    "CompareReport",
    "run",
    "compare_series",
    "write_outputs",
]

SCHEMA = 1
CSV_HEADER = f"# condensate-sim v{SCHEMA}"
KINDS = ("ip-sim", "ode", "wf", "pd-sample", "moments", "verify", "figure2")


class ConfigError(ValueError):
    pass


class GridMismatch(ValueError):
    pass


class ReplicaError(RuntimeError):
    def __init__(self, index: int, error: BaseException):
        super().__init__(f"replica {index}: {type(error).__name__}: {error}")
        self.index = index
        self.error = error


def _default_spec() -> dict:
    return RateSpec.leading_example(1, 1.0).to_dict()


@dataclass
class ExperimentConfig:
    """One experiment. Serialized as canonical JSON (sorted keys, two-space indent).

    ``grid`` is either a point count (equispaced on ``[0, horizon]``) or an
    explicit list of times. ``options`` holds kind-specific settings.
    """

    kind: str
    spec: dict = field(default_factory=_default_spec)
    rho: float = 1.0
    sizes: list = field(default_factory=lambda: [[1000, 1000]])
    horizon: float = 3.0
    grid: object = 31
    replicas: int = 1
    replica_offset: int = 0
    master_seed: int = 0
    observables: list = field(default_factory=lambda: ["gamma", "y", "fast_fraction", "phi"])
    initial: object = "single-pile"
    options: dict = field(default_factory=dict)
    output: Optional[str] = None

    FIELDS = ("kind", "spec", "rho", "sizes", "horizon", "grid", "replicas", "replica_offset", "master_seed",
              "observables", "initial", "options", "output")

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        try:
            self.model_spec = RateSpec.from_dict(self.spec)
            self.spec = self.model_spec.to_dict()
            self.params = ModelParams(self.model_spec, float(self.rho))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model: {exc}") from None
        self.rho = float(self.rho)
        self.horizon = float(self.horizon)
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if int(self.replicas) != self.replicas or self.replicas < 1:
            raise ConfigError("replicas must be a positive integer")
        self.replicas = int(self.replicas)
        if int(self.replica_offset) != self.replica_offset or self.replica_offset < 0:
            raise ConfigError("replica_offset must be a non-negative integer")
        self.replica_offset = int(self.replica_offset)
        self.master_seed = int(self.master_seed)
        sizes = []
        for entry in self.sizes:
            if isinstance(entry, (int, float)):
                L, N = int(entry), int(round(self.rho * entry))
            else:
                L, N = (int(v) for v in entry)
                if N != round(self.rho * L):
                    raise ConfigError(f"size (L={L}, N={N}) inconsistent with rho={self.rho}: need N = round(rho L)")
            if L < 1:
                raise ConfigError("L must be positive")
            sizes.append([L, N])
        self.sizes = sizes
        times = self.times()
        if times[0] < 0 or times[-1] > self.horizon + 1e-12 or np.any(np.diff(times) <= 0):
            raise ConfigError("grid must be strictly increasing within [0, horizon]")
        try:
            InitialCondition.parse(self.initial)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def times(self) -> np.ndarray:
        if isinstance(self.grid, (list, tuple)):
            return np.asarray(self.grid, dtype=float)
        if int(self.grid) != self.grid or self.grid < 1:
            raise ConfigError("grid must be a positive point count or a list of times")
        return np.linspace(0.0, self.horizon, int(self.grid))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.FIELDS}
        if isinstance(d["initial"], InitialCondition):
            d["initial"] = d["initial"].to_json()
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(cls.FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "kind" not in d:
            raise ConfigError("config needs a 'kind'")
        return cls(**d)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig.from_dict(d)


@dataclass
class RunResult:
    """``data`` has shape ``(replicas, len(times), len(labels))``."""

    kind: str
    times: np.ndarray
    labels: list
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def mean(self) -> np.ndarray:
        return self.data.mean(axis=0)

    @property
    def se(self) -> np.ndarray:
        R = self.data.shape[0]
        if R < 2:
            return np.zeros(self.data.shape[1:])
        return self.data.std(axis=0, ddof=1) / math.sqrt(R)

    def column(self, name: str) -> np.ndarray:
        return self.mean[:, self.labels.index(name)]

    def column_se(self, name: str) -> np.ndarray:
        return self.se[:, self.labels.index(name)]

    def to_csv(self) -> str:
        with_se = self.data.shape[0] > 1
        head = ["t"]
        for lab in self.labels:
            head += [lab, f"{lab}_se"] if with_se else [lab]
        lines = [CSV_HEADER, ",".join(head)]
        mean, se = self.mean, self.se
        for n, t in enumerate(self.times):
            row = [t]
            for c in range(len(self.labels)):
                row += [mean[n, c], se[n, c]] if with_se else [mean[n, c]]
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        body = {
            "kind": self.kind,
            "t": self.times.tolist(),
            "labels": self.labels,
            "mean": self.mean.tolist(),
            "se": self.se.tolist(),
            "replicas": self.data.shape[0],
        }
        return json.dumps(body, sort_keys=True) + "\n"

    @classmethod
    def pooled(cls, parts: list) -> "RunResult":
        """Concatenate replicas of runs that share kind, grid and labels."""
        first = parts[0]
        for p in parts[1:]:
            if p.labels != first.labels or not np.array_equal(p.times, first.times):
                raise GridMismatch("cannot pool runs with different grids or columns")
        return cls(first.kind, first.times, first.labels, np.concatenate([p.data for p in parts]), dict(first.meta))


# -- per-kind runners ---------------------------------------------------------


def _ip_replica(args):
    spec_dict, L, N, initial, seed, grid, observables, mmax, topk = args
    spec = RateSpec.from_dict(spec_dict)
    state = init(spec, L, N, InitialCondition.parse(initial), seed)
    t0 = time.perf_counter()
    series = run_observed(state, grid, observables, mmax=mmax, topk=topk)
    cols = series.columns()
    return ([c for c, _ in cols], np.stack([v for _, v in cols], axis=1),
            {"accepted": state.accepted, "rejected": state.rejected, "wall": time.perf_counter() - t0})


def _map(fn, jobs, n_jobs: int):
    if n_jobs == 1:
        out = []
        for i, job in enumerate(jobs):
            try:
                out.append(fn(job))
            except Exception as exc:
                raise ReplicaError(i, exc) from exc
        return out
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        futures = [pool.submit(fn, job) for job in jobs]
        out = []
        for i, f in enumerate(futures):
            try:
                out.append(f.result())
            except Exception as exc:
                raise ReplicaError(i, exc) from exc
        return out


def _run_ip(cfg: ExperimentConfig, n_jobs: int) -> RunResult:
    grid = cfg.times()
    mmax = int(cfg.options.get("mmax", 4))
    topk = int(cfg.options.get("topk", 0))
    labels, blocks, counts = None, [], []
    for L, N in cfg.sizes:
        jobs = [(cfg.spec, L, N, cfg.initial, replica_seed(cfg.master_seed, cfg.replica_offset + i), grid,
                 tuple(cfg.observables), mmax, topk) for i in range(cfg.replicas)]
        res = _map(_ip_replica, jobs, n_jobs)
        names = res[0][0]
        if len(cfg.sizes) > 1:
            names = [f"{c}[L={L}]" for c in names]
        labels = names if labels is None else labels + names
        blocks.append(np.stack([r[1] for r in res]))
        counts.append({"L": L, "N": N, "accepted": [r[2]["accepted"] for r in res],
                       "rejected": [r[2]["rejected"] for r in res], "wall": [r[2]["wall"] for r in res]})
    return RunResult(cfg.kind, grid, labels, np.concatenate(blocks, axis=2), {"sizes": counts})


def _y0(cfg: ExperimentConfig) -> np.ndarray:
    A = cfg.params.A
    if "y0" in cfg.options:
        return np.asarray(cfg.options["y0"], dtype=float)
    y0 = np.zeros(A)
    if A:
        y0[0] = 1.0
    return y0


def _run_ode(cfg: ExperimentConfig) -> RunResult:
    grid = cfg.times()
    sol = integrate(cfg.params, _y0(cfg), grid, tol=float(cfg.options.get("tol", 1e-10)))
    labels = [f"y_{k}" for k in range(cfg.params.A)] + ["gamma", "theta"]
    data = np.column_stack([sol.states, sol.gamma_track, sol.theta_track])[None]
    return RunResult(cfg.kind, grid, labels, data, {"h": sol.h})


def _run_figure2(cfg: ExperimentConfig) -> RunResult:
    """Fast-phase mass for A=1 from several initial masses, with its two equilibria."""
    grid = cfg.times()
    spec = RateSpec.leading_example(1, float(cfg.options.get("theta", 1.0)))
    rho = float(cfg.options.get("rho", 1.0))
    params = ModelParams(spec, rho)
    gamma0s = [float(g) for g in cfg.options.get("gamma0", [0.025, 0.25, 0.65, 1.0])]
    labels, cols = [], []
    for g0 in gamma0s:
        y0 = 1.0 - rho * (1.0 - g0)
        if not 0.0 <= y0 <= 1.0:
            raise ConfigError(f"initial mass {g0} not reachable at rho={rho}")
        sol = integrate(params, [y0], grid)
        labels += [f"gamma[g0={g0!r}]", f"closed_form[g0={g0!r}]"]
        cols += [sol.gamma_track, gamma_closed_form_A1(spec.theta_cap, rho, grid, g0)]
    labels += ["equilibrium_0", "equilibrium_limit"]
    cols += [np.zeros(grid.size), np.full(grid.size, max(1.0 - 1.0 / (2.0 * rho), 0.0))]
    return RunResult(cfg.kind, grid, labels, np.column_stack(cols)[None], {"rho": rho, "gamma0": gamma0s})


def _run_wf(cfg: ExperimentConfig) -> RunResult:
    grid = cfg.times()
    o = cfg.options
    ms = tuple(int(m) for m in o.get("ms", [2, 3]))
    res = simulate_wf(cfg.params, int(o.get("M", 50)), _y0(cfg), grid, dt=float(o.get("dt", 1e-3)),
                      paths=int(o.get("paths", 1000)), seed=replica_seed(cfg.master_seed, cfg.replica_offset),
                      ms=ms, scheme=o.get("scheme", "multinomial"))
    labels, cols = [], []
    for m in ms:
        labels += [f"phi{m}_mean", f"phi{m}_se"]
        cols += [res.mean[m], res.se[m]]
    labels += ["gamma", "theta"]
    cols += [res.gamma, res.theta]
    meta = dict(res.meta, paths=res.paths, projection_fraction=res.projection_fraction)
    return RunResult(cfg.kind, grid, labels, np.column_stack(cols)[None], meta)


def _run_pd(cfg: ExperimentConfig) -> RunResult:
    o = cfg.options
    theta = float(o.get("theta", 1.0))
    gamma = float(o.get("gamma", 1.0))
    n = int(o.get("samples", 100_000))
    ms = tuple(int(m) for m in o.get("ms", [2, 3, 4]))
    K = o.get("K")
    phis = pd_phi_samples(theta, gamma, n, ms, None if K is None else int(K),
                          make_rng(replica_seed(cfg.master_seed, cfg.replica_offset)))
    labels, row = [], []
    for c, m in enumerate(ms):
        labels += [f"phi{m}_mean", f"phi{m}_se", f"phi{m}_exact"]
        row += [phis[:, c].mean(), phis[:, c].std(ddof=1) / math.sqrt(n), pd_moment(m, theta, gamma)]
    return RunResult(cfg.kind, np.zeros(1), labels, np.array(row)[None, None, :],
                     {"theta": theta, "gamma": gamma, "samples": n})


def _run_moments(cfg: ExperimentConfig) -> RunResult:
    grid = cfg.times()
    o = cfg.options
    system = MomentSystem(int(o.get("n_max", 6)))
    if "gamma" in o or "theta" in o:
        g, th = float(o.get("gamma", 1.0)), float(o.get("theta", 1.0))
    else:
        g, th = control_drivers(cfg.params, _y0(cfg), float(grid[-1]), float(o.get("h", 1e-3)))
    x0 = o.get("x0", [1.0])
    tab = solve_hierarchy(system, g, th, x0, grid, h=float(o.get("h", 1e-3)))
    return RunResult(cfg.kind, grid, tab.labels, tab.values[None], {"n_max": system.n_max})


def run(cfg: ExperimentConfig, n_jobs: int = 1) -> RunResult:
    """Dispatch ``cfg`` to the matching simulator or solver (verify is handled by :mod:`condensate.verify`)."""
    t0 = time.perf_counter()
    if cfg.kind == "ip-sim":
        res = _run_ip(cfg, n_jobs)
    elif cfg.kind == "ode":
        res = _run_ode(cfg)
    elif cfg.kind == "figure2":
        res = _run_figure2(cfg)
    elif cfg.kind == "wf":
        res = _run_wf(cfg)
    elif cfg.kind == "pd-sample":
        res = _run_pd(cfg)
    elif cfg.kind == "moments":
        res = _run_moments(cfg)
    else:
        raise ConfigError(f"kind {cfg.kind!r} is not a single experiment")
    res.meta.update({
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": [cfg.master_seed, list(range(cfg.replica_offset, cfg.replica_offset + cfg.replicas))],
        "wall_time": time.perf_counter() - t0,
    })
    return res


@dataclass
class CompareReport:
    sup_distance: float
    max_z: float
    z: np.ndarray
    passed: bool

    def line(self) -> str:
        return f"sup={self.sup_distance:.4g} max|z|={self.max_z:.3g} {'pass' if self.passed else 'FAIL'}"


def compare_series(a: RunResult, column: str, ref_times, ref_values, sup_tol: Optional[float] = None,
                   z_tol: Optional[float] = None) -> CompareReport:
    """Sup-norm distance and z-scores ``|mean - ref| / SE`` of ``a[column]`` against a reference curve."""
    ref_times = np.asarray(ref_times, dtype=float)
    ref_values = np.asarray(ref_values, dtype=float)
    if ref_times.shape != a.times.shape or not np.allclose(ref_times, a.times, rtol=0, atol=1e-12):
        raise GridMismatch("series and reference are on different grids")
    mean = a.column(column)
    se = a.column_se(column)
    diff = np.abs(mean - ref_values)
    sup = float(diff.max())
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, np.where(diff == 0, 0.0, np.inf))
    max_z = float(z.max())
    ok = (sup_tol is None or sup < sup_tol) and (z_tol is None or max_z <= z_tol)
    return CompareReport(sup, max_z, z, ok)


def write_outputs(res: RunResult, out_dir, stem: Optional[str] = None, fmt: str = "csv") -> list:
    """Write the data file plus a JSON metadata sidecar; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or res.kind
    if fmt == "csv":
        data_path = out / f"{stem}.csv"
        data_path.write_text(res.to_csv())
    elif fmt == "json":
        data_path = out / f"{stem}.json"
        data_path.write_text(res.to_json())
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    meta_path = out / f"{stem}.meta.json"
    meta_path.write_text(json.dumps(res.meta, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return [data_path, meta_path]


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.random.SeedSequence):
        return {"entropy": v.entropy, "spawn_key": list(v.spawn_key)}
    return str(v)
