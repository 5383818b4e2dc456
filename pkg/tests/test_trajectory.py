import numpy as np
import pytest
from scipy import stats

from pairsim.darkstate import DarkStateSpec, dark_state
from pairsim.fock import (
    FockSpace, annihilation_matrix, hamiltonian_terms, pair_jumps, product_state,
)
from pairsim.lindblad import DensityMatrix, LindbladModel, evolve, observables
from pairsim.trajectory import (
    NotSaturatedError, Observable, ObservableSeries, TrajectoryConfig, effective_hamiltonian,
    equilibrium_time, max_jump_rate, run_ensemble, run_trajectory,
)


def _dense(h):
    return h.toarray() if hasattr(h, "toarray") else np.asarray(h)


def test_effective_hamiltonian_single_jump():
    a = annihilation_matrix(3).matrix
    model = LindbladModel(None, [(a, 0.6)])
    np.testing.assert_allclose(_dense(effective_hamiltonian(model)), -0.6j * a.T @ a)


def test_effective_hamiltonian_without_dissipation_is_h():
    sp = FockSpace(2, 2)
    h = hamiltonian_terms("kerr", 0.3, sp)
    model = LindbladModel(h, [(op, 0.0) for op, _ in pair_jumps(sp)])
    np.testing.assert_allclose(_dense(effective_hamiltonian(model)), h.toarray())


def test_dark_state_is_zero_mode_of_heff():
    psi = dark_state(DarkStateSpec(3, 1, 2))
    model = LindbladModel(None, pair_jumps(psi.space))
    out = effective_hamiltonian(model).matrix @ psi.amplitudes
    assert np.abs(out).max() < 1e-12


def test_max_jump_rate_and_dt_rule():
    sp = FockSpace(3, 2)
    model = LindbladModel(None, pair_jumps(sp))
    assert max_jump_rate(model) == pytest.approx(16.0)
    psi = product_state([2, 0, 2], sp)
    with pytest.raises(ValueError):
        run_trajectory(model, psi, TrajectoryConfig(dt=0.01, t_final=0.1))


def test_config_validation():
    with pytest.raises(ValueError):
        TrajectoryConfig(dt=0.0, t_final=1.0)
    with pytest.raises(ValueError):
        TrajectoryConfig(dt=0.1, t_final=1.0, n_traj=0)
    with pytest.raises(ValueError):
        TrajectoryConfig(dt=0.1, t_final=1.0, t_sample=0.25)
    with pytest.raises(ValueError):
        TrajectoryConfig(dt=0.1, t_final=1.0, observables=(Observable("x", "n", (0,)),
                                                           Observable("x", "n", (1,))))
    cfg = TrajectoryConfig(dt=0.01, t_final=1.0, t_sample=0.25)
    np.testing.assert_allclose(cfg.times, [0, 0.25, 0.5, 0.75, 1.0])


@pytest.mark.parametrize("backend", ["dense", "mps"])
def test_dark_state_never_jumps(backend):
    psi = dark_state(DarkStateSpec(3, 1, 2))
    model = LindbladModel(None, pair_jumps(psi.space))
    cfg = TrajectoryConfig(dt=2.5e-3, t_final=0.5, t_sample=0.1, jump_log=True, n_traj=3,
                           observables=(Observable("p01", "pair", (0, 1)),))
    for k in range(cfg.n_traj):
        res = run_trajectory(model, psi.amplitudes, cfg, backend=backend, index=k)
        assert res.jumps == []
        np.testing.assert_allclose(res.values[0].real, 2 / 3, atol=1e-8)


def test_single_mode_jump_time_law():
    # one photon, jump a at rate kappa: exactly one jump, waiting time
    # exponential with rate 2 kappa
    kappa = 1.0
    model = LindbladModel(None, [(annihilation_matrix(2).matrix, kappa)])
    cfg = TrajectoryConfig(dt=1e-3, t_final=5.0, t_sample=0.5, n_traj=1500, seed=3, jump_log=True)
    times = []
    for k in range(cfg.n_traj):
        res = run_trajectory(model, np.array([0.0, 1.0]), cfg, index=k)
        assert len(res.jumps) <= 1
        if res.jumps:
            times.append(res.jumps[0][1])
    # survival to t=5 is e^-10: every trajectory jumped
    assert len(times) == cfg.n_traj
    p = stats.kstest(np.array(times) - cfg.dt / 2, "expon", args=(0, 1 / (2 * kappa))).pvalue
    assert p > 1e-3


def test_seeded_runs_are_bit_identical():
    sp = FockSpace(3, 2)
    model = LindbladModel(None, pair_jumps(sp))
    psi = product_state([2, 0, 2], sp).amplitudes
    cfg = TrajectoryConfig(dt=0.003, t_final=0.6, t_sample=0.03, seed=42, jump_log=True,
                           observables=(Observable("p", "pair", (0, 2)),))
    a = run_trajectory(model, psi, cfg, index=5)
    b = run_trajectory(model, psi, cfg, index=5)
    assert a.jumps == b.jumps and len(a.jumps) > 0
    assert np.array_equal(a.values, b.values)


def test_threads_do_not_change_ensemble():
    sp = FockSpace(3, 2)
    model = LindbladModel(None, pair_jumps(sp))
    psi = product_state([2, 0, 2], sp).amplitudes
    cfg = TrajectoryConfig(dt=0.003, t_final=0.3, t_sample=0.03, seed=1, n_traj=6,
                           observables=(Observable("p", "pair", (0, 2)),))
    a = run_ensemble(model, psi, cfg)
    b = run_ensemble(model, psi, cfg, threads=3)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.stderr, b.stderr)


def test_single_trajectory_stderr_is_infinite():
    sp = FockSpace(2, 2)
    model = LindbladModel(None, pair_jumps(sp))
    cfg = TrajectoryConfig(dt=0.003, t_final=0.03, observables=(Observable("n0", "n", (0,)),))
    s = run_ensemble(model, product_state([2, 0], sp).amplitudes, cfg)
    assert np.all(np.isinf(s.stderr))


def test_ensemble_tracks_exact_evolution_and_conserves_number():
    sp = FockSpace(4, 2)
    model = LindbladModel(None, pair_jumps(sp)).in_sector(4, [1, 1, 1, 1])
    psi = product_state([2, 0, 2, 0], sp)
    obs = (Observable("pair", "pair", (0, 1)), Observable("single", "single", (0, 2)),
           Observable("N", "number_total"))
    cfg = TrajectoryConfig(dt=0.003, t_final=3.0, t_sample=0.3, n_traj=200, seed=8,
                           observables=obs)
    s = run_ensemble(model, psi, cfg)
    exact = evolve(model, DensityMatrix.from_state(model.reduce(psi)), cfg.times)
    ops = [o.dense_matrix(model) for o in obs]
    ref = np.array([observables(r, ops) for r in exact]).T
    err = np.where(s.stderr > 0, s.stderr, np.inf)
    # the jump time is resolved to one step, so allow that bias on top of the noise
    assert np.all(np.abs(s.mean[0] - ref[0]) <= 3 * err[0] + 0.02)
    assert np.abs(s.mean[1]).max() < 1e-12
    np.testing.assert_allclose(s.mean[2].real, 4.0, atol=1e-12)


def test_distance_observable_averages_pairs():
    psi = dark_state(DarkStateSpec(4, 2, 4))
    model = LindbladModel(None, pair_jumps(psi.space))
    m = Observable("d2", "pair_distance", (2,)).dense_matrix(model)
    assert np.vdot(psi.amplitudes, m @ psi.amplitudes).real == pytest.approx(1.2)
    with pytest.raises(ValueError):
        Observable("d", "pair_distance", (4,)).dense_matrix(model)
    with pytest.raises(ValueError):
        Observable("z", "bogus").dense_matrix(model)


def test_equilibrium_time_step_and_exponential():
    t = np.array([0.0, 1.0, 2.0, 2.0, 3.0, 4.0, 5.0])
    y = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0])
    assert equilibrium_time((t, y)) == 2.0
    assert equilibrium_time((t, y), level=0.3) == 2.0
    t = np.linspace(0, 40, 40001)
    assert equilibrium_time((t, 1 - np.exp(-t))) == pytest.approx(np.log(5), abs=1e-6)


def test_equilibrium_time_errors():
    t = np.linspace(0, 1, 50)
    with pytest.raises(NotSaturatedError):
        equilibrium_time((t, np.exp(3 * t)))
    with pytest.raises(ValueError):
        equilibrium_time((t, np.ones_like(t)), level=1.5)


def test_equilibrium_time_on_series():
    t = np.linspace(0, 30, 301)
    s = ObservableSeries(t, ("a", "b"), np.vstack([1 - np.exp(-t), 2 * (1 - np.exp(-t / 2))]),
                         np.zeros((2, t.size)), 10)
    out = equilibrium_time(s)
    assert out["a"] == pytest.approx(np.log(5), abs=2e-3)
    assert out["b"] == pytest.approx(2 * np.log(5), abs=4e-3)
