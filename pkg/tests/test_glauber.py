import itertools

import numpy as np
import pytest

from pairsim.glauber import (
    NotConvergedError, RateTable, RunResult, SpinConfig, analytic_relaxation_time,
    analytic_steady_density, correlation_hierarchy, ensemble, fit_power_exponent, flip_rate,
    ising_oracle, kmc_run, log_grid, steady_and_relaxation,
)

TRIPLES = list(itertools.product((1, -1), repeat=3))


def config(triple):
    return SpinConfig(np.array(triple), periodic=False)


def rate_of(triple, table):
    return flip_rate(SpinConfig(np.array(triple)), 1, table)


def test_exact_rates_by_triple():
    t = RateTable("exact", 2.0, 0.1)
    assert rate_of((1, 1, -1), t) == pytest.approx(1.0)   # hop
    assert rate_of((1, -1, 1), t) == pytest.approx(2.0)   # annihilate
    assert rate_of((1, 1, 1), t) == pytest.approx(0.2)    # produce


def test_glauber_all_up_rate():
    h = 0.3
    t = RateTable("glauber", 1.0, h)
    assert rate_of((1, 1, 1), t) == pytest.approx(0.5 * (1 - t.gamma))
    assert rate_of((1, 1, 1), t) == pytest.approx(h / (1 + h))


def test_glauber_reduces_to_exact_without_production():
    g = RateTable("glauber", 1.7, 0.0)
    e = RateTable("exact", 1.7, 0.0)
    for tr in TRIPLES:
        assert rate_of(tr, g) == pytest.approx(rate_of(tr, e), abs=1e-15)


@pytest.mark.parametrize("h", [1e-3, 0.05, 0.5, 1.0])
def test_glauber_detailed_balance(h):
    table = RateTable("glauber", 1.0, h)
    x = ising_oracle(table).coupling
    for left, s, right in TRIPLES:
        ratio = rate_of((left, s, right), table) / rate_of((left, -s, right), table)
        # energy change of flipping s in -J sum s s'
        boltzmann = np.exp(-2 * x * s * (left + right))
        assert ratio == pytest.approx(boltzmann, rel=1e-12)


def test_rate_table_validation():
    with pytest.raises(ValueError):
        RateTable("metropolis")
    with pytest.raises(ValueError):
        RateTable("exact", 0.0)
    with pytest.raises(ValueError):
        RateTable("exact", 1.0, -0.1)


def test_flip_rate_open_ends_are_frozen():
    c = SpinConfig(np.array([1, -1, 1, 1]), periodic=False)
    t = RateTable()
    assert flip_rate(c, 0, t) == 0.0 and flip_rate(c, 3, t) == 0.0
    with pytest.raises(IndexError):
        flip_rate(c, 4, t)


def test_spin_config_defects():
    c = SpinConfig.from_defects(6, [1, 4])
    np.testing.assert_array_equal(c.defects, [0, 1, 0, 0, 1, 0])
    o = SpinConfig.from_defects(5, [0, 2, 3], periodic=False)
    assert len(o.spins) == 6
    np.testing.assert_array_equal(o.defects, [1, 0, 1, 1, 0])
    with pytest.raises(ValueError):
        SpinConfig.from_defects(6, [1])
    with pytest.raises(ValueError):
        SpinConfig(np.array([1, 0, -1]))


def test_adjacent_defects_annihilate_for_good():
    r = kmc_run(20, RateTable(), 50.0, init=("from_defects", [5, 6]), seed=1)
    assert r.mean[0] == pytest.approx(2 / 20)
    assert r.mean[-1] == 0.0
    k = int(np.argmax(r.mean == 0))
    assert np.all(r.mean[k:] == 0)


def test_all_up_without_production_stays_empty():
    r = kmc_run(30, RateTable(), 100.0, init="all_up", seed=2)
    assert np.all(r.mean == 0)


def test_periodic_defect_count_stays_even():
    L = 40
    table = RateTable("exact", 1.0, 0.05)
    grid = np.linspace(0, 20, 201)
    for seed in range(5):
        r = kmc_run(L, table, 20.0, seed=seed, grid=grid)
        counts = np.rint(r.mean * L).astype(int)
        np.testing.assert_allclose(counts, r.mean * L, atol=1e-9)
        assert np.all(counts % 2 == 0)


def test_kmc_validation_and_determinism():
    with pytest.raises(ValueError):
        kmc_run(2, RateTable(), 1.0)
    with pytest.raises(ValueError):
        kmc_run(10, RateTable(), 0.0)
    with pytest.raises(ValueError):
        ensemble(10, RateTable(), 1.0, n_hist=1)
    a = ensemble(50, RateTable(), 10.0, 20, seed=4)
    b = ensemble(50, RateTable(), 10.0, 20, seed=4, threads=2)
    np.testing.assert_array_equal(a.histories, b.histories)
    assert a.n_hist == 20


def test_random_start_density_decays():
    r = ensemble(100, RateTable(), 100.0, 200, seed=5, grid=log_grid(100.0, 20))
    assert r.mean[0] == pytest.approx(0.5, abs=0.02)
    late = r.mean[r.times >= 1]
    assert np.all(np.diff(late) <= 3 * r.stderr[r.times >= 1][1:])
    assert late[-1] < late[0] / 4


def test_ensemble_matches_correlation_hierarchy():
    # h = 0 exact rates coincide with glauber rates, whose pair correlations
    # obey closed linear equations
    grid = np.linspace(0, 8, 9)
    r = ensemble(200, RateTable(), 8.0, 300, seed=6, grid=grid)
    ref = correlation_hierarchy(RateTable(), grid)
    assert np.all(np.abs(r.mean - ref)[1:] <= 4 * r.stderr[1:])


def test_rate_time_covariance():
    grid = np.array([0.0, 0.5, 1.0, 2.0, 4.0])
    a = ensemble(100, RateTable("exact", 1.0), 4.0, 400, seed=11, grid=grid)
    b = ensemble(100, RateTable("exact", 2.0), 2.0, 400, seed=12, grid=grid / 2)
    comb = np.sqrt(a.stderr**2 + b.stderr**2)
    assert np.all(np.abs(a.mean - b.mean)[1:] <= 4 * comb[1:])


def test_size_independence():
    grid = log_grid(50.0, 12)
    a = ensemble(100, RateTable(), 50.0, 300, seed=13, grid=grid)
    b = ensemble(400, RateTable(), 50.0, 100, seed=14, grid=grid)
    comb = np.sqrt(a.stderr**2 + b.stderr**2)
    assert np.all(np.abs(a.mean - b.mean)[1:] <= 3.5 * comb[1:])


def _synthetic(m):
    t = np.geomspace(1, 1000, 30)
    return RunResult(t, m(t), np.zeros_like(t), [0])


def test_power_fit_on_exact_laws():
    e, _ = fit_power_exponent(_synthetic(lambda t: t ** -0.5), (1, 1000))
    assert e == pytest.approx(-0.5, abs=1e-12)
    e, _ = fit_power_exponent(_synthetic(lambda t: 3.0 / t), (1, 1000))
    assert e == pytest.approx(-1.0, abs=1e-12)


def test_power_fit_errors():
    bad = _synthetic(lambda t: 0 * t)
    with pytest.raises(ValueError):
        fit_power_exponent(bad, (1, 1000))
    with pytest.raises(ValueError):
        fit_power_exponent(_synthetic(lambda t: 1 / t), (2000, 3000))


def test_analytic_references():
    assert analytic_steady_density(1e-2) == pytest.approx(0.1 / 1.1)
    assert analytic_relaxation_time(RateTable("glauber", 1.0, 1e-2)) == pytest.approx(25.25)
    assert analytic_relaxation_time(RateTable("glauber", 1.0, 0.0)) == np.inf


def test_ising_oracle():
    o = ising_oracle(RateTable("glauber", 1.0, 1.0))
    assert o.gamma == 0 and o.nn_correlation == 0 and o.m_s == pytest.approx(0.5)
    o = ising_oracle(RateTable("glauber", 1.0, 1e-2))
    assert o.m_s == pytest.approx(0.1 / 1.1, rel=1e-12)
    assert np.tanh(2 * o.coupling) == pytest.approx(o.gamma)
    h = 1e-8
    assert ising_oracle(RateTable("glauber", 1.0, h)).m_s == pytest.approx(np.sqrt(h), rel=1e-3)
    z = ising_oracle(RateTable("glauber", 1.0, 0.0))
    assert z.zero_temperature and z.m_s == 0.0
    with pytest.raises(ValueError):
        ising_oracle(RateTable("exact", 1.0, 0.1))


def test_steady_state_needs_production():
    r = _synthetic(lambda t: t ** -0.5)
    with pytest.raises(NotConvergedError):
        steady_and_relaxation(r, RateTable("glauber", 1.0, 0.0))


def test_steady_state_on_synthetic_relaxation():
    table = RateTable("glauber", 1.0, 1e-2)
    tau, m_s = 25.25, 0.09
    t = np.linspace(0, 2000, 4001)[1:]
    m = m_s + 0.3 * np.exp(-t / tau) / np.sqrt(t)
    res = steady_and_relaxation(RunResult(t, m, np.zeros_like(t), [0]), table)
    # the final-decade mean still carries a trace of the tail
    assert res.m_s == pytest.approx(m_s, rel=1e-5)
    assert res.tau == pytest.approx(tau, rel=1e-3)
    assert res.tau_analytic == pytest.approx(tau)
    drifting = RunResult(t, 1 / t ** 0.5, np.zeros_like(t), [0])
    with pytest.raises(NotConvergedError):
        steady_and_relaxation(drifting, table)
