"""Monte-Carlo wavefunction unraveling with norm-threshold jump sampling.

Each trajectory draws a uniform threshold ``r``, evolves the unnormalised
state under ``H_eff = H - i sum_k kappa_k l_k^dag l_k`` in steps of ``dt``
and jumps at the first step where ``||psi||^2 < r``. The channel is drawn
with probability proportional to ``kappa_k ||l_k psi||^2``. Jump times are
therefore resolved to one step, an error of first order in ``dt``.

Two step propagators are available on the dense backend: ``exact`` uses
``expm(-i H_eff dt)`` and ``trotter`` uses the same second-order bond-gate
product as the MPS backend, which makes seeded jump records of the two
backends directly comparable. Both are norm-contracting, so the crossing
step is found with precomputed powers ``U^(2^m)`` instead of stepping one
``dt`` at a time.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import mps as _mps
from .darkstate import correlator_operator
from .fock import (
    LatticeOperator,
    OperatorSum,
    StateVector,
    SiteRangeError,
    embed_local,
    number_total,
    site_op,
    site_operators,
)
from .lindblad import LindbladModel
from .mps import NoChannelError, select_channel

log = logging.getLogger(__name__)

__all__ = [
    "NoChannelError", "NotSaturatedError", "Observable", "TrajectoryConfig",
    "TrajectoryResult", "ObservableSeries", "effective_hamiltonian", "run_trajectory",
    "run_ensemble", "equilibrium_time", "max_jump_rate",
]


class NotSaturatedError(ValueError):
    pass


@dataclass(frozen=True)
class Observable:
    """A named expectation value.

    ``kind`` is one of ``single`` and ``pair`` (two sites), ``n`` and
    ``parity`` (one site), ``single_distance`` and ``pair_distance`` (one
    distance ``r``: the correlator averaged over all pairs ``(i, i + r)`` of
    the open chain), ``number_total``, ``defect_density`` or ``operator`` (an
    explicit operator; on the MPS backend it must act on one bond).
    """

    label: str
    kind: str
    sites: tuple[int, ...] = ()
    operator: object = None

    def dense_matrix(self, model: LindbladModel):
        space = model.space
        if self.kind in ("single", "pair"):
            op = correlator_operator(space, *self.sites, order=self.kind)
        elif self.kind in ("single_distance", "pair_distance"):
            order, (r,) = self.kind.split("_")[0], self.sites
            if not 0 <= r < space.L:
                raise ValueError(f"distance {r} outside [0, {space.L})")
            mats = [model.project(correlator_operator(space, i, i + r, order=order))
                    for i in range(space.L - r)]
            return sp.csr_matrix(sum(mats[1:], mats[0]) / len(mats))
        elif self.kind == "n":
            op = site_op("n", self.sites[0], space)
        elif self.kind == "parity":
            op = site_op("P", self.sites[0], space)
        elif self.kind == "number_total":
            op = number_total(space)
        elif self.kind == "defect_density":
            s = site_operators(space.d)
            odd = (s["id"] - s["P"]) / (2 * space.L)
            op = OperatorSum(space, tuple(LatticeOperator(space, (j,), odd, "", True)
                                          for j in range(space.L)))
        elif self.kind == "operator":
            op = self.operator
        else:
            raise ValueError(f"unknown observable kind {self.kind!r}")
        return sp.csr_matrix(model.project(op))

    def measure_mps(self, state, cache: dict | None = None) -> complex:
        """Value on an MPS; ``cache`` shares correlation matrices between observables."""
        if self.kind == "operator":
            op = self.operator
            j, m = _mps._bond_local(op, op.space)
            return state.expect_two_site(m, j)
        if self.kind in ("single", "pair", "single_distance", "pair_distance"):
            order = self.kind.split("_")[0]
            cache = {} if cache is None else cache
            if order not in cache:
                cache[order] = _mps.correlation_matrix(state, order)
            c = cache[order]
            if self.kind in ("single", "pair"):
                i, j = self.sites
                for x in (i, j):
                    if not 0 <= x < state.L:
                        raise SiteRangeError(f"site {x} outside [0, {state.L})")
                return complex(c[i, j])
            (r,) = self.sites
            if not 0 <= r < state.L:
                raise ValueError(f"distance {r} outside [0, {state.L})")
            return complex(np.diagonal(c, r).mean())
        return _mps.measure(state, self.kind, self.sites)


def correlator_observables(order: str, i: int, js: Sequence[int]) -> list[Observable]:
    return [Observable(f"{order}_{i}_{j}", order, (i, j)) for j in js]


@dataclass(frozen=True)
class TrajectoryConfig:
    dt: float
    t_final: float
    n_traj: int = 1
    seed: int = 0
    observables: tuple[Observable, ...] = ()
    jump_log: bool = False
    t_sample: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "observables", tuple(self.observables))
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_final < 0:
            raise ValueError(f"t_final must be >= 0, got {self.t_final}")
        if self.n_traj < 1:
            raise ValueError(f"n_traj must be >= 1, got {self.n_traj}")
        labels = [o.label for o in self.observables]
        if len(set(labels)) != len(labels):
            raise ValueError("observable labels must be unique")
        self.steps_per_sample
        self.n_samples

    @property
    def steps_per_sample(self) -> int:
        ts = self.dt if self.t_sample is None else self.t_sample
        k = int(round(ts / self.dt))
        if k < 1 or abs(k * self.dt - ts) > 1e-9 * max(ts, 1.0):
            raise ValueError(f"t_sample={ts} is not a positive multiple of dt={self.dt}")
        return k

    @property
    def n_samples(self) -> int:
        span = self.steps_per_sample * self.dt
        n = int(round(self.t_final / span))
        if abs(n * span - self.t_final) > 1e-9 * max(self.t_final, 1.0):
            raise ValueError(f"t_final={self.t_final} is not a multiple of t_sample={span}")
        return n

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples + 1) * self.steps_per_sample * self.dt

    def validate(self, model: LindbladModel) -> None:
        """Reject steps that are not small against the fastest jump rate."""
        rate = max_jump_rate(model)
        if rate > 0 and self.dt > 0.05 / rate * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds 0.05/max_k(kappa_k ||l_k^dag l_k||) = {0.05 / rate:.3g}")


def _spectral_norm_sq(op) -> float:
    if isinstance(op, LatticeOperator):
        return float(np.linalg.norm(op.local, 2) ** 2)
    m = op.matrix if isinstance(op, OperatorSum) else op
    m = m.toarray() if sp.issparse(m) else np.asarray(m)
    return float(np.linalg.norm(m, 2) ** 2)


def max_jump_rate(model: LindbladModel) -> float:
    """max_k kappa_k ||l_k^dag l_k||_2 over the channels of ``model``."""
    return max((rate * _spectral_norm_sq(op) for op, rate in model.jumps), default=0.0)


def effective_hamiltonian(model: LindbladModel):
    """H - i sum_k kappa_k l_k^dag l_k.

    Lattice models give an :class:`OperatorSum` of local terms (``.matrix``
    for the full sparse matrix); models built from raw matrices, or
    restricted to a sector, give a sparse matrix on the model basis.
    """
    lattice = model.space is not None and model.basis is None and all(
        isinstance(op, LatticeOperator) for op, _ in model.jumps) and (
        model.H is None or isinstance(model.H, (LatticeOperator, OperatorSum)))
    if lattice:
        terms = list(_mps._terms(model.H))
        for op, rate in model.jumps:
            terms.append(LatticeOperator(model.space, op.support,
                                         -1j * rate * (op.local.conj().T @ op.local),
                                         f"-i{rate}{op.label}^dag{op.label}"))
        return OperatorSum(model.space, tuple(terms), "H_eff")
    h = model.H_matrix
    for m, rate in model.jump_matrices:
        h = h - 1j * rate * (m.conj().T @ m)
    return sp.csr_matrix(h)


@dataclass
class TrajectoryResult:
    times: np.ndarray
    values: np.ndarray  # (n_obs, n_times) complex
    labels: tuple[str, ...]
    jumps: list[tuple[int, float, int]] = field(default_factory=list)  # (step, time, channel)
    final_state: object = None


@dataclass
class ObservableSeries:
    """Ensemble means and standard errors on the sample grid.

    ``stderr`` is the sample standard deviation over trajectories divided by
    ``sqrt(n_traj)``; for complex observables real and imaginary variances
    are added. With one trajectory it is ``inf``.
    """

    times: np.ndarray
    labels: tuple[str, ...]
    mean: np.ndarray
    stderr: np.ndarray
    n_traj: int

    def __getitem__(self, label: str) -> tuple[np.ndarray, np.ndarray]:
        k = self.labels.index(label)
        return self.mean[k], self.stderr[k]


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


# ---------------------------------------------------------------------------
# Dense backend

class _DenseStepper:
    def __init__(self, model: LindbladModel, cfg: TrajectoryConfig, propagator: str):
        self.model = model
        if propagator == "exact":
            h = effective_hamiltonian(model)
            h = h.matrix if isinstance(h, OperatorSum) else h
            h = model.project(h) if h.shape[0] != model.dim else h
            u = sla.expm(-1j * cfg.dt * h.toarray())
        elif propagator == "trotter":
            plan = _mps.build_trotter_plan(model, cfg.dt)
            space = model.space
            u = sp.identity(space.dim, dtype=complex, format="csr")
            for lay in plan.layers:
                for g in lay:
                    u = embed_local(g.matrix, (g.bond, g.bond + 1), space.L, space.d) @ u
            u = u.toarray()
        else:
            raise ValueError(f"propagator must be 'exact' or 'trotter', got {propagator!r}")
        self.powers = [u]
        top = max(1, cfg.steps_per_sample).bit_length()
        for _ in range(top - 1):
            self.powers.append(self.powers[-1] @ self.powers[-1])
        self.jumps = [(sp.csr_matrix(m), rate) for m, rate in model.jump_matrices]

    def advance(self, psi: np.ndarray, steps: int, threshold: float) -> tuple[np.ndarray, int]:
        """Largest ``k <= steps`` with ``||U^k psi||^2 >= threshold``; returns (U^k psi, k)."""
        k = 0
        for m in range(len(self.powers) - 1, -1, -1):
            n = 1 << m
            if k + n > steps:
                continue
            cand = self.powers[m] @ psi
            if np.vdot(cand, cand).real >= threshold:
                psi, k = cand, k + n
        return psi, k

    def jump(self, psi: np.ndarray, u: float) -> tuple[np.ndarray, int]:
        outs = [m @ psi for m, _ in self.jumps]
        w = [rate * np.vdot(o, o).real for o, (_, rate) in zip(outs, self.jumps)]
        k = select_channel(w, u)
        out = outs[k]
        return out / np.linalg.norm(out), k


def _dense_trajectory(model, psi0, cfg: TrajectoryConfig, index: int, stepper, obs_mats):
    rng = _rng(cfg.seed, index)
    psi = model.reduce(psi0).astype(complex)
    psi = psi / np.linalg.norm(psi)
    times = cfg.times
    values = np.empty((len(obs_mats), len(times)), dtype=complex)

    def record(col, v):
        n2 = np.vdot(v, v).real
        for r, m in enumerate(obs_mats):
            values[r, col] = np.vdot(v, m @ v) / n2

    record(0, psi)
    threshold = rng.random()
    jumps = []
    step = 0
    sps = cfg.steps_per_sample
    for col in range(1, len(times)):
        remaining = sps
        while remaining > 0:
            psi, k = stepper.advance(psi, remaining, threshold)
            step += k
            remaining -= k
            if remaining == 0:
                break
            # step k + 1 crosses the threshold
            psi = stepper.powers[0] @ psi
            step += 1
            remaining -= 1
            psi, ch = stepper.jump(psi, rng.random())
            threshold = rng.random()
            if cfg.jump_log:
                jumps.append((step, step * cfg.dt, ch))
        record(col, psi)
    return TrajectoryResult(times, values, tuple(o.label for o in cfg.observables), jumps,
                            StateVector(psi / np.linalg.norm(psi), model.space)
                            if model.basis is None else psi / np.linalg.norm(psi))


# ---------------------------------------------------------------------------
# MPS backend

def _mps_initial(psi0, model, chi_max, svd_cutoff):
    space = model.space
    if isinstance(psi0, _mps.MPSState):
        st = psi0.copy()
        st.chi_max, st.svd_cutoff = chi_max, svd_cutoff
        return st.normalize()
    if isinstance(psi0, (list, tuple)):
        return _mps.from_product_state(psi0, space, chi_max, svd_cutoff)
    return _mps.from_dense(np.asarray(psi0), space, chi_max, svd_cutoff).normalize()


def _mps_trajectory(model, psi0, cfg: TrajectoryConfig, index: int, plan, chi_max, svd_cutoff):
    rng = _rng(cfg.seed, index)
    state = _mps_initial(psi0, model, chi_max, svd_cutoff)
    times = cfg.times
    values = np.empty((len(cfg.observables), len(times)), dtype=complex)

    def record(col):
        cache = {}
        for r, o in enumerate(cfg.observables):
            values[r, col] = o.measure_mps(state, cache)

    record(0)
    threshold = rng.random()
    jumps = []
    step = 0
    integ = _mps.TebdIntegrator(state, plan)
    for col in range(1, len(times)):
        for _ in range(cfg.steps_per_sample):
            n2 = integ.step()
            step += 1
            if n2 < threshold:
                integ.materialize()
                ch = _mps.select_channel(_mps.jump_weights(state, plan), rng.random())
                _mps.apply_jump(state, plan, ch)
                threshold = rng.random()
                if cfg.jump_log:
                    jumps.append((step, step * cfg.dt, ch))
        integ.materialize()
        record(col)
    return TrajectoryResult(times, values, tuple(o.label for o in cfg.observables), jumps,
                            state.normalize())


# ---------------------------------------------------------------------------

class _Runner:
    def __init__(self, model, cfg, backend, propagator, chi_max, svd_cutoff):
        cfg.validate(model)
        self.model, self.cfg, self.backend = model, cfg, backend
        self.chi_max, self.svd_cutoff = chi_max, svd_cutoff
        if backend == "dense":
            self.stepper = _DenseStepper(model, cfg, propagator)
            self.obs_mats = [o.dense_matrix(model) for o in cfg.observables]
        elif backend == "mps":
            self.plan = _mps.build_trotter_plan(model, cfg.dt)
        else:
            raise ValueError(f"backend must be 'dense' or 'mps', got {backend!r}")

    def __call__(self, psi0, index: int) -> TrajectoryResult:
        if self.backend == "dense":
            return _dense_trajectory(self.model, psi0, self.cfg, index, self.stepper, self.obs_mats)
        return _mps_trajectory(self.model, psi0, self.cfg, index, self.plan, self.chi_max,
                               self.svd_cutoff)


def run_trajectory(model: LindbladModel, psi0, cfg: TrajectoryConfig, backend: str = "dense",
                   index: int = 0, propagator: str = "exact", chi_max: int = 64,
                   svd_cutoff: float = 1e-10) -> TrajectoryResult:
    """One trajectory; its random stream is fixed by ``(cfg.seed, index)``.

    ``psi0`` is a dense vector (full space or model sector), or for the MPS
    backend also an occupation list or an :class:`~pairsim.mps.MPSState`.
    """
    return _Runner(model, cfg, backend, propagator, chi_max, svd_cutoff)(psi0, index)


def reduce_results(results: Sequence[TrajectoryResult]) -> ObservableSeries:
    """Mean and standard error in trajectory-index order (schedule independent)."""
    vals = np.stack([r.values for r in results])
    n = len(results)
    mean = vals.mean(axis=0)
    if n > 1:
        var = vals.real.var(axis=0, ddof=1) + vals.imag.var(axis=0, ddof=1)
        stderr = np.sqrt(var / n)
    else:
        stderr = np.full(mean.shape, np.inf)
    return ObservableSeries(results[0].times, results[0].labels, mean, stderr, n)


def run_ensemble(model: LindbladModel, psi0, cfg: TrajectoryConfig, backend: str = "dense",
                 threads: int = 1, propagator: str = "exact", chi_max: int = 64,
                 svd_cutoff: float = 1e-10, return_trajectories: bool = False):
    """Average ``cfg.n_traj`` independent trajectories.

    Trajectory ``k`` always uses the stream ``(cfg.seed, k)``, and the
    reduction runs in index order, so ``threads`` never changes the result.
    """
    runner = _Runner(model, cfg, backend, propagator, chi_max, svd_cutoff)
    idx = range(cfg.n_traj)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda k: runner(psi0, k), idx))
    else:
        results = [runner(psi0, k) for k in idx]
    series = reduce_results(results)
    return (series, results) if return_trajectories else series


def equilibrium_time(series: ObservableSeries | tuple[np.ndarray, np.ndarray], level: float = 0.8,
                     labels: Sequence[str] | None = None):
    """First time each observable reaches ``level`` times its saturation value.

    The saturation value is the mean over the final 10% of samples, which
    must vary by less than 5% of it. Crossings are linearly interpolated; a
    repeated time point represents a step.
    """
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if isinstance(series, ObservableSeries):
        labels = series.labels if labels is None else labels
        return {lab: _crossing(series.times, series[lab][0].real, level, lab) for lab in labels}
    t, y = series
    return _crossing(np.asarray(t, float), np.asarray(y).real, level, "series")


def _crossing(t: np.ndarray, y: np.ndarray, level: float, label: str) -> float:
    n_tail = max(1, int(np.ceil(0.1 * len(y))))
    tail = y[-n_tail:]
    sat = tail.mean()
    if sat == 0 or np.max(np.abs(tail - sat)) >= 0.05 * abs(sat):
        raise NotSaturatedError(f"{label}: final samples have not saturated")
    target = level * sat
    sign = np.sign(sat)
    above = np.flatnonzero(sign * y >= sign * target)
    k = int(above[0])
    if k == 0:
        return float(t[0])
    y0, y1 = y[k - 1], y[k]
    return float(t[k - 1] + (target - y0) / (y1 - y0) * (t[k] - t[k - 1]))
