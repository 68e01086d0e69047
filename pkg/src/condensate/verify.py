"""Acceptance checks, runnable from the CLI (``verify``) and from the test suite.

Each check returns a :class:`CriterionResult` with a one-line summary and the
CSV tables it produced. Tables contain only seeded, deterministic numbers so
that two runs with the same master seed are byte-identical; timings go to the
metadata only.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .configuration import Configuration, check_coupling_bounds, embed, gamma_N
from .control import control_drivers, integrate, long_time_gamma
from .harness import CSV_HEADER, ExperimentConfig, compare_series, run
from .ipsim import init, make_rng, replica_seed, step
from .model import (
    ModelParams,
    RateSpec,
    beta_bar,
    beta_of_y,
    fixed_point_ybar,
    gamma_closed_form_A1,
    gamma_of_y,
    rho_crit,
    theta_of_y,
    u1,
    u2,
)
from .moments import MomentSystem, solve_hierarchy
from .pd import pd_moment, pd_phi_samples, simulate_wf, stick_break

__all__ = ["CriterionResult", "VerifyReport", "CRITERIA", "run_criterion", "run_verify"]


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    tables: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.title}: {self.summary}"


def _csv(header: list, rows) -> str:
    lines = [CSV_HEADER, ",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def _seed(master: int, number: int) -> list:
    return [int(master), 1000 + number]


def _int_seed(master: int, number: int) -> int:
    # harness configs carry a single integer master seed
    return int(np.random.SeedSequence(_seed(master, number)).generate_state(1)[0])


def _leading(A=1, theta=1.0):
    return RateSpec.leading_example(A, theta)


def _random_spec(rng, A: int) -> RateSpec:
    q = rng.uniform(0.2, 3.0, size=A)
    r = np.concatenate([[rng.uniform(0.2, 3.0)], q * rng.uniform(1.0, 2.0, size=A)])
    return RateSpec(A=A, q=tuple(q), r=tuple(r), zeta_scale=0.0)


# 1 -------------------------------------------------------------------------


def criterion_1(master_seed: int = 0) -> CriterionResult:
    grid = np.linspace(0.0, 3.0, 301)
    rhos = (0.025, 0.25, 0.65, 1.0)
    t0 = time.perf_counter()
    errs, cols = [], []
    for rho in rhos:
        sol = integrate(ModelParams(_leading(), rho), [1.0], grid)
        exact = gamma_closed_form_A1(1.0, rho, grid)
        errs.append(float(np.max(np.abs(sol.gamma_track - exact))))
        cols += [sol.gamma_track, exact]
    elapsed = time.perf_counter() - t0
    ok = max(errs) < 1e-8 and elapsed < 1.0
    header = ["t"] + [f"{k}[rho={r!r}]" for r in rhos for k in ("gamma_ode", "gamma_exact")]
    table = _csv(header, np.column_stack([grid] + cols))
    summary = f"sup error {max(errs):.2e} (< 1e-8), runtime {elapsed:.2f}s (< 1s)"
    return CriterionResult(1, "closed-form ODE", ok, summary, {"c01_closed_form.csv": table},
                           {"errors": errs, "runtime": elapsed})


# 2 -------------------------------------------------------------------------


def criterion_2(master_seed: int = 0) -> CriterionResult:
    rng = make_rng(replica_seed(_seed(master_seed, 2), 0))
    exact_half = rho_crit(_leading()) == 0.5
    rows, worst_rc, worst_norm = [], 0.0, 0.0
    for A in range(1, 11):
        rc = rho_crit(_leading(A))
        worst_rc = max(worst_rc, abs(rc - A / 2) / A)
        rows.append([A, rc, A / 2])
    for _ in range(200):
        ybar = fixed_point_ybar(_random_spec(rng, int(rng.integers(1, 8))))
        worst_norm = max(worst_norm, abs(ybar.sum() - 1.0))
    ok = exact_half and worst_rc <= 1e-15 and worst_norm < 1e-14
    summary = (f"rho_c(A=1) == 1/2 exactly: {exact_half}; max |rho_c - A/2|/A = {worst_rc:.1e}; "
               f"max |sum ybar - 1| = {worst_norm:.1e}")
    return CriterionResult(2, "critical density", ok, summary,
                           {"c02_critical_density.csv": _csv(["A", "rho_c", "A_over_2"], rows)})


# 3 -------------------------------------------------------------------------


def criterion_3(master_seed: int = 0) -> CriterionResult:
    rng = make_rng(replica_seed(_seed(master_seed, 3), 0))
    rows, worst = [], 0.0
    for s in range(20):
        A = int(rng.integers(1, 6))
        spec = _random_spec(rng, A)
        params = ModelParams(spec, float(rng.uniform(0.5, 2 * A + 1)))
        ys = []
        while len(ys) < 1000:
            y = rng.dirichlet(np.ones(A + 1), size=2000)[:, :A]
            ys.extend(y[gamma_of_y(params, y) > 0])
        Y = np.array(ys[:1000])
        err = float(np.max(np.abs(beta_of_y(params, Y) - beta_bar(params, Y))))
        worst = max(worst, err)
        rows.append([s, A, params.rho, err])
    ok = worst < 1e-12
    return CriterionResult(3, "beta identity", ok, f"max |beta - r_A y_A| = {worst:.2e} over 20 specs x 1000 points (< 1e-12)",
                           {"c03_beta_identity.csv": _csv(["spec", "A", "rho", "max_error"], rows)})


# 4 -------------------------------------------------------------------------


def criterion_4(master_seed: int = 0) -> CriterionResult:
    cases = [(1, 2.0), (2, 3.0), (1, 0.25)]
    rows, ok = [], True
    for A, rho in cases:
        params = ModelParams(_leading(A), rho)
        y0 = np.zeros(A)
        y0[0] = 1.0
        res = long_time_gamma(params, y0)
        target = params.gamma_bar
        err = abs(res.gamma - target)
        ok &= err < 1e-6 and res.converged
        rows.append([A, rho, res.gamma, target, err, float(res.converged), res.t_end])
    summary = ", ".join(f"(A={int(r[0])}, rho={r[1]:g}) -> {r[2]:.9f} vs {r[3]:.9f}" for r in rows)
    return CriterionResult(4, "long-time mass", ok, summary + " (tol 1e-6)",
                           {"c04_long_time.csv": _csv(["A", "rho", "gamma_end", "target", "error", "converged", "t_end"], rows)})


# 5 -------------------------------------------------------------------------


def _c5_run(initial: str, master_seed: int):
    cfg = ExperimentConfig(kind="ip-sim", spec=_leading().to_dict(), rho=1.0, sizes=[[1000, 1000]], horizon=3.0,
                           grid=30, replicas=20, master_seed=master_seed, observables=["gamma", "y"],
                           initial=initial)
    res = run(cfg)
    spec = _leading()
    eta0 = init(spec, 1000, 1000, initial, 0).config.eta
    y0 = embed(eta0, spec).y
    sol = integrate(ModelParams(spec, 1.0), y0, res.times)
    return res, sol


def criterion_5(master_seed: int = 0) -> CriterionResult:
    seed = _int_seed(master_seed, 5)
    res, sol = _c5_run("all-ones", seed)
    exact = gamma_closed_form_A1(1.0, 1.0, res.times)
    cg = compare_series(res, "gamma_N", res.times, exact, sup_tol=0.05)
    cy = compare_series(res, "y_0", res.times, sol.states[:, 0], sup_tol=0.05)
    ok = cg.passed and cy.passed
    # all-ones sits on the absorbing set gamma = 0; a single pile starts at gamma_N = 1 - 1/N
    res1, sol1 = _c5_run("single-pile", seed)
    pile_g = compare_series(res1, "gamma_N", res1.times, exact)
    pile_y = compare_series(res1, "y_0", res1.times, sol1.states[:, 0])
    own = compare_series(res, "gamma_N", res.times, sol.gamma_track)
    summary = (f"all-ones: sup|gamma_N - closed form| = {cg.sup_distance:.4f}, sup|y0 - Y0| = {cy.sup_distance:.4f} "
               f"(< 0.05), vs ODE from its own start {own.sup_distance:.4f}; single-pile (info): "
               f"gamma {pile_g.sup_distance:.4f}, y0 {pile_y.sup_distance:.4f}")
    header = ["t", "gamma_N", "gamma_N_se", "gamma_exact", "y0", "y0_se", "Y0_ode"]
    t1 = _csv(header, np.column_stack([res.times, res.column("gamma_N"), res.column_se("gamma_N"), exact,
                                       res.column("y_0"), res.column_se("y_0"), sol.states[:, 0]]))
    t2 = _csv(header, np.column_stack([res1.times, res1.column("gamma_N"), res1.column_se("gamma_N"), exact,
                                       res1.column("y_0"), res1.column_se("y_0"), sol1.states[:, 0]]))
    return CriterionResult(5, "pre-limit tracks limit", ok, summary,
                           {"c05_all_ones.csv": t1, "c05_single_pile.csv": t2},
                           {"single_pile_gamma": pile_g.sup_distance, "single_pile_y0": pile_y.sup_distance,
                            "all_ones_vs_own_ode": own.sup_distance})


# 6 -------------------------------------------------------------------------


def criterion_6(master_seed: int = 0, replicas: int = 20) -> CriterionResult:
    Ls = [250, 500, 1000, 2000]
    cfg = ExperimentConfig(kind="ip-sim", spec=_leading().to_dict(), rho=1.0, sizes=[[L, L] for L in Ls], horizon=1.0,
                           grid=[1.0], replicas=replicas, master_seed=_int_seed(master_seed, 6),
                           observables=["fast_integral"], initial="all-ones")
    res = run(cfg)
    vals = [float(res.column(f"fast_integral[L={L}]")[0]) for L in Ls]
    ses = [float(res.column_se(f"fast_integral[L={L}]")[0]) for L in Ls]
    decreasing = all(a > b for a, b in zip(vals, vals[1:]))
    ok = decreasing and vals[-1] < vals[0] / 2
    summary = "values " + ", ".join(f"L={L}: {v:.3e}" for L, v in zip(Ls, vals)) + \
              f"; strictly decreasing: {decreasing}; ratio L=2000/L=250 = {vals[-1] / vals[0]:.3f} (< 0.5)"
    return CriterionResult(6, "instantaneous condensation", ok, summary,
                           {"c06_fast_fraction.csv": _csv(["L", "mean", "se"], zip(Ls, vals, ses))})


# 7 -------------------------------------------------------------------------


def criterion_7(master_seed: int = 0, replicas: int = 50) -> CriterionResult:
    spec = _leading()
    params = ModelParams(spec, 1.0)
    cfg = ExperimentConfig(kind="ip-sim", spec=spec.to_dict(), rho=1.0, sizes=[[1000, 1000]], horizon=10.0,
                           grid=[10.0], replicas=replicas, master_seed=_int_seed(master_seed, 7),
                           observables=["gamma", "phi"], initial="slow-equilibrium")
    res = run(cfg)
    m, se = float(res.column("phi2")[0]), float(res.column_se("phi2")[0])
    g_star = params.gamma_bar
    ybar = fixed_point_ybar(spec)
    cands = {"theta(ybar)": float(theta_of_y(params, ybar[:-1])), "Theta": spec.theta_cap}
    rows, within = [], []
    for name, th in cands.items():
        pred = g_star**2 / (1.0 + th)
        z = abs(m - pred) / se
        rows.append([name, th, pred, m, se, z])
        if z <= 3:
            within.append(name)
    ok = bool(within)
    summary = (f"E[phi2] = {m:.4f} +- {se:.4f}; " +
               "; ".join(f"{r[0]}={r[1]:g}: {r[2]:.4f} (z={r[5]:.2f})" for r in rows) +
               f"; within 3 SE: {', '.join(within) if within else 'none'}")
    return CriterionResult(7, "stationary condensate (theta arbitration)", ok, summary,
                           {"c07_theta_arbitration.csv": _csv(["candidate", "theta_star", "prediction", "phi2_mean", "phi2_se", "z"], rows)},
                           {"within": within, "gamma_N": float(res.column("gamma_N")[0])})


# 8 -------------------------------------------------------------------------


def criterion_8(master_seed: int = 0, paths: int = 10_000, euler_paths: int = 2000) -> CriterionResult:
    params = ModelParams(_leading(), 1.0)
    grid = np.array([0.5, 1.0, 2.0])
    wf = simulate_wf(params, 50, [1.0], grid, dt=1e-3, paths=paths, seed=replica_seed(_seed(master_seed, 8), 0))
    g, th = control_drivers(params, [1.0], 2.0)
    tab = solve_hierarchy(MomentSystem(3), g, th, [1.0], grid)
    rows, worst = [], 0.0
    for m in (2, 3):
        oracle = tab.column(f"phi{m}")
        z = np.abs(wf.mean[m] - oracle) / wf.se[m]
        worst = max(worst, float(z.max()))
        rows += [[m, t, wf.mean[m][i], wf.se[m][i], oracle[i], z[i]] for i, t in enumerate(grid)]
    ok = worst <= 3.0
    # Euler-Maruyama with truncated boundary, reported for comparison
    em = simulate_wf(params, 50, [1.0], grid, dt=1e-3, paths=euler_paths, seed=replica_seed(_seed(master_seed, 8), 1),
                     scheme="euler")
    em_z = max(float(np.max(np.abs(em.mean[m] - tab.column(f"phi{m}")) / em.se[m])) for m in (2, 3))
    summary = (f"multinomial WF (M=50, dt=1e-3, {paths} paths): max |z| = {worst:.2f} (<= 3); "
               f"Euler-Maruyama ({euler_paths} paths, info): max |z| = {em_z:.1f}, "
               f"projection on {em.projection_fraction:.0%} of path-steps")
    return CriterionResult(8, "WF vs moment oracle", ok, summary,
                           {"c08_wf_vs_oracle.csv": _csv(["m", "t", "wf_mean", "wf_se", "oracle", "z"], rows)},
                           {"euler_max_z": em_z, "euler_projection_fraction": em.projection_fraction})


# 9 -------------------------------------------------------------------------


def criterion_9(master_seed: int = 0, samples: int = 100_000) -> CriterionResult:
    rows, worst = [], 0.0
    for k, theta in enumerate((0.5, 1.0, 2.0)):
        phis = pd_phi_samples(theta, 1.0, samples, (2, 3, 4), rng=make_rng(replica_seed(_seed(master_seed, 9), k)))
        for c, m in enumerate((2, 3, 4)):
            mean = phis[:, c].mean()
            se = phis[:, c].std(ddof=1) / math.sqrt(samples)
            exact = pd_moment(m, theta)
            z = abs(mean - exact) / se
            worst = max(worst, z)
            rows.append([theta, m, mean, se, exact, z])
    s = stick_break(1.0, U=[0.5, 0.5, 0.5])
    recursion = s.v.tolist() == [0.5, 0.25, 0.125]
    ok = worst <= 3.0 and recursion
    return CriterionResult(9, "PD sampler", ok, f"max |z| = {worst:.2f} over 9 moments (<= 3); U=(1/2,1/2,1/2) -> {s.v.tolist()}",
                           {"c09_pd_moments.csv": _csv(["theta", "m", "mean", "se", "exact", "z"], rows)})


# 10 ------------------------------------------------------------------------


def _random_config(rng, A: int, L: int, fast_site: bool) -> np.ndarray:
    eta = rng.integers(0, A + 1, size=L)
    if fast_site:
        F = int(rng.integers(1, 40))
        # the tracked site plus F-1 other fast sites; excess chosen so gamma_N > 0.1
        slow_mass = eta[F:].sum()
        extra = int(np.ceil(0.12 * (slow_mass + A * F) / 0.88)) + int(rng.integers(0, 3 * L))
        parts = rng.multinomial(extra, np.full(F, 1.0 / F))
        eta[:F] = A + 1 + parts
    else:
        eta[0] = rng.integers(0, A + 1)
        if rng.random() < 0.5:
            F = int(rng.integers(1, 40))
            eta[1:F + 1] = A + 1 + rng.integers(0, 5 * L // F, size=F)
    return eta


def criterion_10(master_seed: int = 0, n: int = 1000, L: int = 1000) -> CriterionResult:
    rng = make_rng(replica_seed(_seed(master_seed, 10), 0))
    violations, fast_n, slow_n = 0, 0, 0
    p_slack, c_slack, s_slack = np.inf, np.inf, np.inf
    rows = []
    for i in range(n):
        A = int(rng.integers(1, 4))
        spec = _leading(A, float(rng.uniform(0.5, 3.0))) if i % 2 == 0 else _random_spec(rng, A)
        for fast in (True, False):
            eta = _random_config(rng, A, L, fast)
            conf = Configuration(eta, spec)
            if fast and gamma_N(conf, spec) <= 0.1:
                continue
            rep = check_coupling_bounds(conf, spec, delta=0.1, raise_on_violation=False)
            violations += not rep.ok
            if rep.branch == "fast":
                fast_n += 1
                p_slack = min(p_slack, rep.p_slack)
                c_slack = min(c_slack, rep.c_slack)
            elif rep.branch == "slow":
                slow_n += 1
                s_slack = min(s_slack, rep.c_slack)
            if i < 50:
                rows.append([i, A, int(fast), rep.c, -1.0 if rep.p is None else rep.p, rep.c_slack])
    ok = violations == 0 and fast_n >= n and slow_n >= n
    summary = (f"{fast_n} fast-site and {slow_n} slow-site configurations, {violations} violations; "
               f"min slack p {p_slack:.3g}, c lower {c_slack:.3g}, c upper {s_slack:.3g}")
    return CriterionResult(10, "coupling rate bounds", ok, summary,
                           {"c10_coupling_sample.csv": _csv(["config", "A", "fast", "c", "p", "c_slack"], rows)})


# 11 ------------------------------------------------------------------------


def rate_matrix(spec: RateSpec, L: int, N: int):
    """Explicit transition rates ``eta -> eta^{ij}`` by enumeration of all states and pairs."""
    from itertools import product

    states = [s for s in product(range(N + 1), repeat=L) if sum(s) == N]
    rates = {}
    for s in states:
        for i in range(L):
            for j in range(L):
                if i == j or s[i] == 0:
                    continue
                t = list(s)
                t[i] -= 1
                t[j] += 1
                r = float(u1(spec, L, s[i]) * u2(spec, L, s[j]))
                rates[(s, tuple(t))] = rates.get((s, tuple(t)), 0.0) + r
    return states, rates


def criterion_11(master_seed: int = 0, events: int = 1_000_000) -> CriterionResult:
    spec = _leading()
    L, N = 2, 3
    states, rates = rate_matrix(spec, L, N)
    state = init(spec, L, N, "single-pile", replica_seed(_seed(master_seed, 11), 0))
    hold = {s: 0.0 for s in states}
    counts = {}
    cur = tuple(int(v) for v in state.config.eta)
    for _ in range(events):
        ev = step(state)
        hold[cur] += ev.holding
        if ev.accepted:
            nxt = tuple(int(v) for v in state.config.eta)
            counts[(cur, nxt)] = counts.get((cur, nxt), 0) + 1
            cur = nxt
    rows, worst = [], 0.0
    for (s, t), r in sorted(rates.items()):
        k = counts.get((s, t), 0)
        est = k / hold[s]
        se = math.sqrt(max(k, 1)) / hold[s]
        z = abs(est - r) / se
        worst = max(worst, z)
        rows.append(["".join(map(str, s)), "".join(map(str, t)), r, est, se, z])
    unexpected = [key for key in counts if key not in rates]
    ok = worst <= 3.0 and not unexpected
    return CriterionResult(11, "small-instance exactness", ok,
                           f"{len(rates)} transitions, max |z| = {worst:.2f} (<= 3), {len(unexpected)} unexpected transitions",
                           {"c11_rate_matrix.csv": _csv(["from", "to", "rate", "estimate", "se", "z"], rows)})


CRITERIA: dict = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
    7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11,
}


def run_criterion(number: int, master_seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    res = CRITERIA[number](master_seed)
    res.seconds = time.perf_counter() - t0
    return res


@dataclass
class VerifyReport:
    results: list
    master_seed: int

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list:
        return [r.line() for r in self.results]

    def summary_csv(self) -> str:
        return _csv(["criterion", "title", "passed"], [[str(r.number), r.title, str(bool(r.passed))] for r in self.results])

    def write(self, out_dir) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for r in self.results:
            for name, text in r.tables.items():
                (out / name).write_text(text)
                paths.append(out / name)
        (out / "verify_summary.csv").write_text(self.summary_csv())
        meta = {"master_seed": self.master_seed,
                "criteria": {str(r.number): {"passed": bool(r.passed), "summary": r.summary, "seconds": r.seconds}
                             for r in self.results}}
        (out / "verify.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return paths


def run_verify(master_seed: int = 0, out_dir=None, which=None, echo: Optional[Callable] = None,
               repro: bool = False) -> VerifyReport:
    """Run the acceptance checks. With ``repro`` the CSV-producing checks are
    run a second time and the tables compared byte for byte (criterion 12)."""
    numbers = sorted(CRITERIA) if which is None else sorted(which)
    results = []
    for n in numbers:
        res = run_criterion(n, master_seed)
        results.append(res)
        if echo:
            echo(res.line())
    if repro:
        t0 = time.perf_counter()
        again = [run_criterion(n, master_seed) for n in numbers]
        diff = [name for a, b in zip(results, again) for name in a.tables if a.tables[name] != b.tables.get(name)]
        res = CriterionResult(12, "reproducibility", not diff,
                              f"second run with seed {master_seed}: {len(diff)} differing CSVs" +
                              (f" ({', '.join(diff)})" if diff else ""), seconds=time.perf_counter() - t0)
        results.append(res)
        if echo:
            echo(res.line())
    report = VerifyReport(results, master_seed)
    if out_dir is not None:
        report.write(out_dir)
    return report
