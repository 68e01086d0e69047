import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from condensate.configuration import (
    BoundViolation,
    Configuration,
    KingmanVector,
    ZeroRate,
    check_coupling_bounds,
    diagonal_mass,
    embed,
    gamma_N,
    phi_m,
    total_rate_c,
    up_probability_p,
)
from condensate.model import RateSpec, u1, u2

LEAD = RateSpec.leading_example(1, 1.0)
GENERIC = RateSpec(A=2, q=(1.0, 2.0), r=(0.5, 1.5, 4.0))

occupations = st.lists(st.integers(0, 12), min_size=2, max_size=12).filter(lambda v: sum(v) > 0)


def brute_rates(eta, spec, site):
    # direct sums over ordered pairs involving ``site``
    L = len(eta)
    a = [float(u1(spec, L, n)) for n in eta]
    b = [float(u2(spec, L, n)) for n in eta]
    out_rate = sum(a[site] * b[j] for j in range(L) if j != site)
    in_rate = sum(a[j] * b[site] for j in range(L) if j != site)
    return out_rate + in_rate, in_rate


def test_embedding_by_hand():
    eta = [0, 1, 4, 0, 2, 1]
    e = embed(eta, LEAD)
    # N = 8, excess (3, 1), #_0 = 2 of L = 6
    assert e.x == KingmanVector([3 / 8, 1 / 8])
    assert np.allclose(e.y, [2 / 6])
    assert gamma_N(eta, LEAD) == pytest.approx(0.5)
    e2 = embed(eta, GENERIC)
    assert e2.x.isclose([2 / 8])
    assert np.allclose(e2.y, [2 / 6, 2 / 6])


def test_kingman_vector():
    x = KingmanVector([0.1, 0.0, 0.3, 0.2])
    assert x.values.tolist() == [0.3, 0.2, 0.1]
    assert x == [0.2, 0.1, 0.3, 0.0, 0.0]
    assert x.phi(2) == pytest.approx(0.14)
    assert len(KingmanVector()) == 0
    with pytest.raises(ValueError):
        KingmanVector([0.7, 0.6])
    with pytest.raises(ValueError):
        KingmanVector([-0.1])
    with pytest.raises(ValueError):
        phi_m(x, 1)


@given(occupations)
def test_embedding_mass_balance(eta):
    spec = GENERIC
    e = embed(eta, spec)
    N, L = sum(eta), len(eta)
    yf = np.append(e.y, 1 - e.y.sum())
    # each particle is either excess on a fast site or counted by min(eta_i, A)
    slow_mass = np.arange(spec.A + 1) @ yf * L
    assert e.x.total() * N + slow_mass == pytest.approx(N, abs=1e-9)
    assert e.x.total() == pytest.approx(gamma_N(eta, spec), abs=1e-12)
    assert np.all(np.diff(e.x.values) <= 0)


@given(occupations, st.sampled_from([LEAD, GENERIC]), st.data())
def test_rates_against_pair_sums(eta, spec, data):
    site = data.draw(st.integers(0, len(eta) - 1))
    c, in_rate = brute_rates(eta, spec, site)
    assert total_rate_c(eta, spec, site) == pytest.approx(c, rel=1e-12, abs=1e-15)
    if c > 0:
        assert up_probability_p(eta, spec, site) == pytest.approx(in_rate / c, rel=1e-12, abs=1e-15)
    else:
        with pytest.raises(ZeroRate):
            up_probability_p(eta, spec, site)


def test_diagonal_mass():
    eta = [0, 1, 3]
    L = 3
    expect = sum(float(u1(LEAD, L, n) * u2(LEAD, L, n)) for n in eta)
    assert diagonal_mass(eta, LEAD) == pytest.approx(expect)


@given(occupations, st.sampled_from([LEAD, GENERIC]), st.data())
def test_moves_keep_caches_consistent(eta, spec, data):
    conf = Configuration(eta, spec)
    conf.validate()
    for _ in range(20):
        occupied = np.flatnonzero(conf.eta)
        i = int(data.draw(st.sampled_from(occupied.tolist())))
        j = data.draw(st.integers(0, conf.L - 1))
        conf.move(i, j)
        conf.validate()
    assert conf.N == sum(eta)
    assert conf.fast_count == int(np.sum(conf.eta > spec.A))
    assert set(conf.fast_sites().tolist()) == set(np.flatnonzero(conf.eta > spec.A).tolist())


def test_move_from_empty_site_rejected():
    conf = Configuration([0, 2], LEAD)
    with pytest.raises(ValueError):
        conf.move(0, 1)


def test_configuration_round_trip():
    conf = Configuration([3, 0, 1, 1, 0, 7], GENERIC)
    again = Configuration.loads(conf.dumps(), GENERIC)
    assert again.histogram() == conf.histogram()
    assert again.dumps() == conf.dumps()
    assert np.array_equal(np.sort(again.eta), np.sort(conf.eta))


def test_configuration_rejects_bad_input():
    with pytest.raises(ValueError):
        Configuration([1, -1], LEAD)
    with pytest.raises(ValueError):
        Configuration([], LEAD)


def test_coupling_bounds_branches():
    L = 1000
    eta = np.ones(L, dtype=int)
    eta[0] = 400
    fast = check_coupling_bounds(eta, LEAD, delta=0.1)
    assert fast.branch == "fast" and fast.ok
    slow = check_coupling_bounds(eta, LEAD, delta=0.1, site=1)
    assert slow.branch == "slow" and slow.ok
    eta[0] = 5
    assert check_coupling_bounds(eta, LEAD, delta=0.1).branch == "vacuous"
    with pytest.raises(ValueError):
        check_coupling_bounds([5, 0], LEAD, delta=0.1)


def test_coupling_violation_raises():
    # q_1 far above r_1 breaks the rate ordering the bound relies on
    bad = RateSpec(A=1, q=(5000.0,), r=(1.0, 1.0), check=False)
    eta = np.ones(1000, dtype=int)
    eta[1] = 500
    rep = check_coupling_bounds(eta, bad, delta=0.1, site=0, raise_on_violation=False)
    assert rep.branch == "slow" and not rep.ok
    with pytest.raises(BoundViolation):
        check_coupling_bounds(eta, bad, delta=0.1, site=0)
