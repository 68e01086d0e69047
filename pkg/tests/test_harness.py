import json

import numpy as np
import pytest

from condensate.harness import (
    CSV_HEADER,
    ConfigError,
    ExperimentConfig,
    GridMismatch,
    ReplicaError,
    RunResult,
    compare_series,
    run,
    write_outputs,
)
from condensate.model import gamma_closed_form_A1


def small_ip(**kw):
    d = dict(kind="ip-sim", sizes=[[200, 200]], horizon=1.0, grid=5, replicas=2, master_seed=3)
    d.update(kw)
    return ExperimentConfig(**d)


def test_config_round_trip_is_byte_identical():
    cfg = small_ip(observables=["gamma", "phi"], initial={"0": 100, "2": 100}, options={"mmax": 3})
    text = cfg.dumps()
    again = ExperimentConfig.loads(text)
    assert again.dumps() == text
    assert again == cfg


def test_bare_sizes_and_defaults():
    cfg = ExperimentConfig(kind="ip-sim", rho=0.5, sizes=[100, 300])
    assert cfg.sizes == [[100, 50], [300, 150]]
    assert cfg.times().tolist() == np.linspace(0, 3, 31).tolist()


@pytest.mark.parametrize("bad", [
    {"kind": "nope"},
    {"kind": "ode", "extra": 1},
    {"kind": "ip-sim", "sizes": [[100, 90]]},
    {"kind": "ode", "horizon": -1},
    {"kind": "ode", "grid": [0.5, 0.2]},
    {"kind": "ode", "grid": [0.0, 4.0]},
    {"kind": "ode", "replicas": 0},
    {"kind": "ode", "spec": {"A": 1, "q": [2.0], "r": [1.0, 1.0]}},
    {"kind": "ip-sim", "initial": "sideways"},
    {"rho": 1.0},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_invalid_json():
    with pytest.raises(ConfigError):
        ExperimentConfig.loads("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.loads("[1, 2]")


def test_overrides():
    cfg = small_ip().with_overrides(master_seed=9, replicas=None)
    assert cfg.master_seed == 9 and cfg.replicas == 2


def test_replica_pooling_matches_single_run():
    a = run(small_ip(replicas=2))
    b = run(small_ip(replicas=2, replica_offset=2))
    whole = run(small_ip(replicas=4))
    pooled = RunResult.pooled([a, b])
    assert np.array_equal(pooled.data, whole.data)
    assert np.allclose(pooled.mean, whole.mean, rtol=0, atol=1e-15)
    assert np.allclose(pooled.se, whole.se, rtol=0, atol=1e-15)
    with pytest.raises(GridMismatch):
        RunResult.pooled([a, run(small_ip(grid=4))])


def test_seeds_and_meta():
    res = run(small_ip())
    assert res.meta["seeds"] == [3, [0, 1]]
    assert res.meta["config"]["master_seed"] == 3
    assert res.data.shape == (2, 5, len(res.labels))
    assert run(small_ip()).to_csv() == res.to_csv()
    assert run(small_ip(master_seed=4)).to_csv() != res.to_csv()


def test_multiple_sizes_label_suffix():
    res = run(small_ip(sizes=[[100, 100], [200, 200]], observables=["gamma"]))
    assert res.labels == ["gamma_N[L=100]", "gamma_N[L=200]"]


def test_csv_layout():
    res = run(small_ip(observables=["gamma"]))
    lines = res.to_csv().splitlines()
    assert lines[0] == CSV_HEADER
    assert lines[1] == "t,gamma_N,gamma_N_se"
    assert len(lines) == 2 + 5
    single = run(ExperimentConfig(kind="ode", grid=3))
    assert single.to_csv().splitlines()[1] == "t,y_0,gamma,theta"
    body = json.loads(single.to_json())
    assert body["replicas"] == 1 and body["labels"] == ["y_0", "gamma", "theta"]


def test_ode_and_figure2_kinds():
    res = run(ExperimentConfig(kind="ode", grid=31))
    assert np.max(np.abs(res.column("gamma") - gamma_closed_form_A1(1.0, 1.0, res.times))) < 1e-9
    fig = run(ExperimentConfig(kind="figure2", grid=31))
    for g0 in (0.025, 0.25, 0.65, 1.0):
        assert np.max(np.abs(fig.column(f"gamma[g0={g0!r}]") - fig.column(f"closed_form[g0={g0!r}]"))) < 1e-8
    assert fig.column("equilibrium_limit")[0] == 0.5
    with pytest.raises(ConfigError):
        run(ExperimentConfig(kind="figure2", options={"rho": 2.0, "gamma0": [0.0]}))


def test_pd_and_moment_kinds():
    res = run(ExperimentConfig(kind="pd-sample", options={"samples": 20_000, "theta": 2.0}))
    for m in (2, 3, 4):
        assert abs(res.column(f"phi{m}_mean")[0] - res.column(f"phi{m}_exact")[0]) < 4 * res.column(f"phi{m}_se")[0]
    mom = run(ExperimentConfig(kind="moments", grid=[0.0, 0.5, 1.0], horizon=1.0, options={"n_max": 3}))
    assert mom.column("phi2")[1] == pytest.approx(0.45736498, abs=1e-8)


def test_wf_kind():
    res = run(ExperimentConfig(kind="wf", grid=[0.0, 0.1], horizon=0.1, options={"M": 5, "paths": 200, "dt": 0.01}))
    assert res.labels == ["phi2_mean", "phi2_se", "phi3_mean", "phi3_se", "gamma", "theta"]
    assert res.meta["paths"] == 200


def test_verify_is_not_a_single_experiment():
    with pytest.raises(ConfigError):
        run(ExperimentConfig(kind="verify"))


def test_replica_failure_is_reported():
    with pytest.raises(ReplicaError) as info:
        run(small_ip(initial="all-ones", rho=0.5, sizes=[[200, 100]]))
    assert info.value.index == 0


def test_compare_series():
    res = run(ExperimentConfig(kind="ode", grid=11))
    exact = gamma_closed_form_A1(1.0, 1.0, res.times)
    rep = compare_series(res, "gamma", res.times, exact, sup_tol=1e-8)
    assert rep.passed and rep.sup_distance < 1e-8
    assert not compare_series(res, "gamma", res.times, exact + 0.1, sup_tol=0.05).passed
    with pytest.raises(GridMismatch):
        compare_series(res, "gamma", res.times[:-1], exact[:-1])
    noisy = run(small_ip(observables=["gamma"], replicas=3))
    rep = compare_series(noisy, "gamma_N", noisy.times, noisy.column("gamma_N"), z_tol=3)
    assert rep.max_z == 0.0 and "pass" in rep.line()


def test_write_outputs(tmp_path):
    res = run(ExperimentConfig(kind="ode", grid=5))
    paths = write_outputs(res, tmp_path, fmt="csv")
    assert [p.name for p in paths] == ["ode.csv", "ode.meta.json"]
    assert paths[0].read_text() == res.to_csv()
    meta = json.loads(paths[1].read_text())
    assert meta["config"]["kind"] == "ode" and "wall_time" in meta
    assert write_outputs(res, tmp_path, stem="x", fmt="json")[0].name == "x.json"
    with pytest.raises(ConfigError):
        write_outputs(res, tmp_path, fmt="xml")


def test_parallel_replicas_match_serial():
    cfg = small_ip(replicas=3)
    assert np.array_equal(run(cfg, n_jobs=2).data, run(cfg).data)
