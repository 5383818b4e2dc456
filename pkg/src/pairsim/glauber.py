"""Kinetic Monte Carlo for parity defects as Ising domain walls.

Defects live on the bonds of a spin chain, ``m_j = (1 - s_j s_{j+1}) / 2``.
Flipping spin ``j`` moves, annihilates or creates domain walls depending on
the triple ``(s_{j-1}, s_j, s_{j+1})``. Only three rate values occur, so
sites are kept in three index lists (one per rate class) and an event is
drawn in O(1): class proportional to ``count * rate``, then a uniform site
within the class.

Open chains carry ``L + 1`` spins whose two end spins never flip, giving
``L`` bonds, i.e. ``L`` defect positions like an open chain of ``L`` modes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
from scipy.integrate import solve_ivp

# rate classes, indexed by s_j (s_{j-1} + s_{j+1}) / 2 + 1
ANNIHILATE, HOP, PRODUCE = 0, 1, 2


class NotConvergedError(ValueError):
    pass


@dataclass(frozen=True)
class SpinConfig:
    spins: np.ndarray
    periodic: bool = True

    def __post_init__(self):
        s = np.asarray(self.spins, dtype=np.int8)
        if s.ndim != 1 or not np.all(np.abs(s) == 1):
            raise ValueError("spins must be a 1D array of +-1")
        object.__setattr__(self, "spins", s)

    @property
    def n_bonds(self) -> int:
        return len(self.spins) if self.periodic else len(self.spins) - 1

    @property
    def defects(self) -> np.ndarray:
        s = self.spins.astype(int)
        right = np.roll(s, -1) if self.periodic else s[1:]
        left = s if self.periodic else s[:-1]
        return (1 - left * right) // 2

    @classmethod
    def from_defects(cls, L: int, defects: Sequence[int], periodic: bool = True) -> "SpinConfig":
        """Spins whose domain walls sit on the bonds listed in ``defects`` (``L`` bonds)."""
        m = np.zeros(L, dtype=int)
        for b in defects:
            if not 0 <= b < L:
                raise ValueError(f"defect bond {b} outside [0, {L})")
            m[b] = 1
        if periodic and m.sum() % 2:
            raise ValueError("a periodic chain needs an even number of defects")
        n_spins = L if periodic else L + 1
        s = np.ones(n_spins, dtype=np.int8)
        for k in range(1, n_spins):
            s[k] = -s[k - 1] if m[k - 1] else s[k - 1]
        return cls(s, periodic)


@dataclass(frozen=True)
class RateTable:
    """``exact``: hop Gamma/2, annihilation Gamma, production Gamma h.

    ``glauber``: w_j = (Gamma/2) [1 - (gamma/2) s_j (s_{j-1} + s_{j+1})]
    with gamma = (1 - h)/(1 + h).
    """

    mode: str = "exact"
    gamma_rate: float = 1.0
    h: float = 0.0

    def __post_init__(self):
        if self.mode not in ("exact", "glauber"):
            raise ValueError(f"mode must be 'exact' or 'glauber', got {self.mode!r}")
        if not self.gamma_rate > 0:
            raise ValueError(f"Gamma must be positive, got {self.gamma_rate}")
        if self.h < 0:
            raise ValueError(f"h must be >= 0, got {self.h}")

    @property
    def gamma(self) -> float:
        return (1 - self.h) / (1 + self.h)

    @property
    def class_rates(self) -> np.ndarray:
        """Rates of the (annihilate, hop, produce) classes."""
        g, h = self.gamma_rate, self.h
        if self.mode == "exact":
            return np.array([g, g / 2, g * h])
        return np.array([g / (1 + h), g / 2, g * h / (1 + h)])

    def rate(self, left: int, s: int, right: int) -> float:
        if self.mode == "glauber":
            return 0.5 * self.gamma_rate * (1 - 0.5 * self.gamma * s * (left + right))
        return float(self.class_rates[s * (left + right) // 2 + 1])


def flip_rate(config: SpinConfig, j: int, table: RateTable) -> float:
    s = config.spins
    n = len(s)
    if not 0 <= j < n:
        raise IndexError(f"site {j} outside [0, {n})")
    if not config.periodic and j in (0, n - 1):
        return 0.0
    return table.rate(int(s[(j - 1) % n]), int(s[j]), int(s[(j + 1) % n]))


@dataclass
class RunResult:
    """Defect density on the observation grid; one row per history in ``histories``."""

    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    seeds: list[int]
    histories: np.ndarray = field(repr=False, default=None)

    @property
    def n_hist(self) -> int:
        return len(self.seeds)


# ---------------------------------------------------------------------------
# numba core

@numba.njit(cache=True)
def _site_class(s, j, n, periodic):
    if periodic:
        left = s[(j - 1) % n]
        right = s[(j + 1) % n]
    else:
        if j == 0 or j == n - 1:
            return -1
        left = s[j - 1]
        right = s[j + 1]
    return (s[j] * (left + right)) // 2 + 1


@numba.njit(cache=True)
def _kmc_core(spins, periodic, rates, grid, seed):
    np.random.seed(seed)
    s = spins.copy()
    n = s.shape[0]
    n_bonds = n if periodic else n - 1
    members = np.empty((3, n), dtype=np.int64)
    count = np.zeros(3, dtype=np.int64)
    pos = np.full(n, -1, dtype=np.int64)
    cls = np.full(n, -1, dtype=np.int64)
    n_def = 0
    for j in range(n_bonds):
        if s[j] != s[(j + 1) % n]:
            n_def += 1
    for j in range(n):
        c = _site_class(s, j, n, periodic)
        cls[j] = c
        if c >= 0:
            pos[j] = count[c]
            members[c, count[c]] = j
            count[c] += 1
    out = np.empty(grid.shape[0])
    t = 0.0
    g = 0
    while g < grid.shape[0]:
        total = 0.0
        for c in range(3):
            total += count[c] * rates[c]
        if total <= 0.0:
            while g < grid.shape[0]:
                out[g] = n_def / n_bonds
                g += 1
            break
        t_next = t + np.random.exponential(1.0 / total)
        while g < grid.shape[0] and grid[g] < t_next:
            out[g] = n_def / n_bonds
            g += 1
        if g == grid.shape[0]:
            break
        t = t_next
        u = np.random.random() * total
        c = 0
        acc = count[0] * rates[0]
        while u >= acc and c < 2:
            c += 1
            acc += count[c] * rates[c]
        if count[c] == 0:
            # u landed on the boundary of an empty class through rounding
            c = 0
            while count[c] == 0 or rates[c] == 0.0:
                c += 1
        k = int(np.random.random() * count[c])
        if k >= count[c]:
            k = count[c] - 1
        j = members[c, k]
        # defects change by -2 (annihilate), 0 (hop), +2 (produce)
        n_def += 2 * (c - 1)
        s[j] = -s[j]
        for dj in (-1, 0, 1):
            q = j + dj
            if periodic:
                q = q % n
            elif q < 0 or q >= n:
                continue
            old = cls[q]
            new = _site_class(s, q, n, periodic)
            if old == new:
                continue
            if old >= 0:
                last = members[old, count[old] - 1]
                members[old, pos[q]] = last
                pos[last] = pos[q]
                count[old] -= 1
            if new >= 0:
                members[new, count[new]] = q
                pos[q] = count[new]
                count[new] += 1
            cls[q] = new
    return out, s


def _history_seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(int(seed))
    return [int(c.generate_state(1, np.uint32)[0]) for c in ss.spawn(n)]


def log_grid(t_final: float, n_points: int = 60, t_min: float = 0.01) -> np.ndarray:
    """0 followed by ``n_points`` logarithmically spaced times up to ``t_final``."""
    return np.concatenate([[0.0], np.geomspace(t_min, t_final, n_points)])


def _initial(L, init, periodic, rng) -> SpinConfig:
    n_spins = L if periodic else L + 1
    if isinstance(init, SpinConfig):
        return init
    if init == "all_up":
        return SpinConfig(np.ones(n_spins, dtype=np.int8), periodic)
    if init == "random":
        return SpinConfig(np.where(rng.random(n_spins) < 0.5, 1, -1).astype(np.int8), periodic)
    if isinstance(init, tuple) and init and init[0] == "from_defects":
        return SpinConfig.from_defects(L, init[1], periodic)
    if isinstance(init, (list, np.ndarray)):
        return SpinConfig.from_defects(L, list(init), periodic)
    raise ValueError(f"unknown init {init!r}")


def kmc_run(L: int, table: RateTable, t_final: float, init="random", seed: int = 0,
            periodic: bool = True, grid: np.ndarray | None = None) -> RunResult:
    """One history. ``init`` is 'random', 'all_up', a list of defect bonds or a SpinConfig."""
    if L < 3:
        raise ValueError(f"L must be >= 3, got {L}")
    if not t_final > 0:
        raise ValueError(f"t_final must be positive, got {t_final}")
    grid = log_grid(t_final) if grid is None else np.asarray(grid, dtype=float)
    rng = np.random.default_rng(seed)
    cfg = _initial(L, init, periodic, rng)
    core_seed = int(rng.integers(0, 2**32 - 1))
    dens, _ = _kmc_core(cfg.spins.astype(np.int64), periodic, table.class_rates, grid, core_seed)
    return RunResult(grid, dens, np.full(grid.shape, np.inf), [int(seed)], dens[None, :])


def ensemble(L: int, table: RateTable, t_final: float, n_hist: int, seed: int = 0,
             init="random", periodic: bool = True, grid: np.ndarray | None = None,
             threads: int = 1) -> RunResult:
    if n_hist < 2:
        raise ValueError(f"n_hist must be >= 2, got {n_hist}")
    grid = log_grid(t_final) if grid is None else np.asarray(grid, dtype=float)
    seeds = _history_seeds(seed, n_hist)

    def one(sd):
        return kmc_run(L, table, t_final, init, sd, periodic, grid).mean

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, seeds))
    else:
        rows = [one(sd) for sd in seeds]
    hist = np.stack(rows)
    return RunResult(grid, hist.mean(axis=0), hist.std(axis=0, ddof=1) / np.sqrt(n_hist),
                     seeds, hist)


def fit_power_exponent(result: RunResult, window: tuple[float, float]) -> tuple[float, float]:
    """Weighted least-squares slope of log m versus log t inside ``window``."""
    t, m, err = result.times, result.mean, result.stderr
    sel = (t >= window[0]) & (t <= window[1])
    if sel.sum() < 2:
        raise ValueError(f"fewer than two samples in window {window}")
    if np.any(m[sel] <= 0):
        raise ValueError("non-positive density inside the fit window")
    x, y = np.log(t[sel]), np.log(m[sel])
    sig = err[sel] / m[sel]
    if np.all(np.isfinite(sig)) and np.all(sig > 0):
        w = 1.0 / sig
    else:
        w = np.ones_like(x)
    coef, cov = np.polyfit(x, y, 1, w=w, cov="unscaled") if sel.sum() > 2 else (
        np.polyfit(x, y, 1), np.zeros((2, 2)))
    return float(coef[0]), float(np.sqrt(max(cov[0, 0], 0.0)))


@dataclass(frozen=True)
class SteadyState:
    m_s: float
    tau: float
    m_s_analytic: float
    tau_analytic: float


def analytic_steady_density(h: float) -> float:
    r = np.sqrt(h)
    return float(r / (1 + r))


def analytic_relaxation_time(table: RateTable) -> float:
    if table.h == 0:
        return np.inf
    return (1 + table.h) / (4 * table.gamma_rate * table.h)


def steady_and_relaxation(result: RunResult, table: RateTable, window: tuple[float, float] | None = None,
                          prefactor_power: float = 0.5) -> SteadyState:
    """Plateau density and relaxation time of an ensemble run.

    ``m_s`` is the mean over the final decade of the grid. ``tau`` comes from
    a straight-line fit of ``log(m - m_s) + p log t`` against ``t`` inside
    ``window`` (default ``[tau_a, 3 tau_a]`` with ``tau_a`` the analytic
    value); ``p = prefactor_power`` removes the algebraic factor that
    accompanies the exponential tail of a diffusive relaxation.
    """
    if table.h == 0:
        raise NotConvergedError("no production: the density decays to zero and tau is undefined")
    t, m = result.times, result.mean
    final = t >= t[-1] / 10
    tail = m[final]
    m_s = float(tail.mean())
    half = len(tail) // 2
    if half == 0 or abs(tail[:half].mean() - tail[half:].mean()) > 0.02 * m_s:
        raise NotConvergedError("density still drifting over the final decade")
    tau_a = analytic_relaxation_time(table)
    lo, hi = window if window is not None else (tau_a, 3 * tau_a)
    dev = m - m_s
    sel = (t >= lo) & (t <= hi)
    if sel.sum() < 3:
        raise NotConvergedError(f"too few samples in the fit window {lo, hi}")
    sign = np.sign(dev[sel].mean())
    sel &= sign * dev > 0
    if sel.sum() < 3:
        raise NotConvergedError(f"too few samples of m - m_s with one sign in {lo, hi}")
    y = np.log(sign * dev[sel]) + prefactor_power * np.log(t[sel])
    err = result.stderr[sel]
    w = np.abs(dev[sel]) / err if np.all(np.isfinite(err)) and np.all(err > 0) else None
    slope = np.polyfit(t[sel], y, 1, w=w)[0]
    if slope >= 0:
        raise NotConvergedError("m - m_s is not decaying in the fit window")
    return SteadyState(m_s, float(-1 / slope), analytic_steady_density(table.h), tau_a)


# ---------------------------------------------------------------------------
# Analytic references

@dataclass(frozen=True)
class IsingOracle:
    gamma: float
    coupling: float  # J / k_B T
    nn_correlation: float
    m_s: float
    zero_temperature: bool = False


def ising_oracle(table: RateTable) -> IsingOracle:
    """Equilibrium Ising chain matching the glauber-mode stationary state."""
    if table.mode != "glauber":
        raise ValueError("the Ising correspondence holds for glauber-mode rates")
    if table.h == 0:
        return IsingOracle(1.0, np.inf, 1.0, 0.0, True)
    g = table.gamma
    x = np.arctanh(g) / 2
    corr = np.tanh(x)
    return IsingOracle(g, float(x), float(corr), float((1 - corr) / 2))


def correlation_hierarchy(table: RateTable, times: np.ndarray, r_max: int = 400,
                          initial: np.ndarray | None = None) -> np.ndarray:
    """Defect density of an infinite chain from the closed equations for G_r = <s_0 s_r>.

    Glauber-mode rates give dG_r/dt = -2 Gamma G_r + Gamma gamma (G_{r-1} + G_{r+1})
    with G_0 = 1; ``m = (1 - G_1)/2``. At ``h = 0`` the two rate tables
    coincide, so this is also exact for exact-mode rates. The default initial
    state is uncorrelated random spins (G_r = 0 for r >= 1).
    """
    g, gam = table.gamma_rate, table.gamma
    if table.mode == "exact" and table.h != 0:
        raise ValueError("closed correlation equations need glauber rates or h = 0")
    g0 = np.zeros(r_max) if initial is None else np.asarray(initial, dtype=float)[:r_max]

    def rhs(_, y):
        left = np.concatenate([[1.0], y[:-1]])
        right = np.concatenate([y[1:], [y[-1]]])
        return -2 * g * y + g * gam * (left + right)

    times = np.asarray(times, dtype=float)
    sol = solve_ivp(rhs, (0.0, times[-1]), g0, t_eval=times, method="LSODA", rtol=1e-10, atol=1e-13)
    if sol.status != 0:
        raise RuntimeError(sol.message)
    return (1 - sol.y[0]) / 2
