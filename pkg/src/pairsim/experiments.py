"""Batch experiments behind the command line.

Each experiment declares a parameter schema, validates a flat parameter map
against it (:meth:`Experiment.prepare`) and then runs, returning in-memory
tables and headline scalars. Nothing touches the filesystem here; writing is
left to :mod:`pairsim.cli` so that a failed run leaves no partial output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import cqed as _cqed
from . import glauber as _gl
from .darkstate import DarkStateSpec, correlator, dark_residual, dark_state
from .fock import (
    FockSpace,
    heal_bond_channels,
    hop_noise_channels,
    number_total,
    pair_jump,
    pair_jumps,
    product_state,
)
from .lindblad import DensityMatrix, LindbladModel, evolve, fidelity, observables
from .trajectory import (
    NotSaturatedError,
    Observable,
    TrajectoryConfig,
    equilibrium_time,
    run_ensemble,
)

CSV_SCHEMA_VERSION = 1

SERIES_HEADER = ("t", "observable", "mean", "stderr")
DARK_HEADER = ("i", "j", "order", "re", "im")
DISTANCE_HEADER = ("variant", "distance", "mean", "stderr")
SWEEP_HEADER = ("sweep", "value", "max_trace_distance", "max_excited_population")
LIGHTCONE_HEADER = ("distance", "t_eq")


class ConfigError(ValueError):
    """Invalid experiment configuration (reported with exit code 2)."""


# ---------------------------------------------------------------------------
# Parameter schema

def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_list(conv):
    def parse(v):
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        s = str(v).strip()
        if not s:
            return []
        return [conv(x.strip()) for x in s.split(",")]
    return parse


def _parse_int(v) -> int:
    if isinstance(v, bool):
        raise ValueError(f"not an integer: {v!r}")
    if isinstance(v, float):
        if not v.is_integer():
            raise ValueError(f"not an integer: {v!r}")
        return int(v)
    return int(str(v).strip())


_PARSERS: dict[str, Callable[[Any], Any]] = {
    "int": _parse_int,
    "float": lambda v: float(v),
    "bool": _parse_bool,
    "str": lambda v: str(v).strip(),
    "ints": _parse_list(_parse_int),
    "floats": _parse_list(float),
}


@dataclass(frozen=True)
class Param:
    kind: str
    default: Any
    help: str = ""


def resolve_parameters(schema: dict[str, Param], given: dict[str, Any]) -> dict[str, Any]:
    """Typed parameters with defaults filled in; unknown keys are rejected by name."""
    unknown = sorted(set(given) - set(schema))
    if unknown:
        raise ConfigError(f"unknown parameter {unknown[0]!r}")
    out = {}
    for key, p in schema.items():
        raw = given.get(key, p.default)
        try:
            out[key] = _PARSERS[p.kind](raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"parameter {key!r}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# Results

@dataclass
class Table:
    header: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)


@dataclass
class Outcome:
    tables: dict[str, Table]
    summary: dict[str, Any]


def series_rows(times, labels, mean, stderr) -> list[tuple]:
    """Long-format rows (t, observable, mean, stderr); imaginary parts get their own label."""
    rows = []
    mean = np.asarray(mean)
    stderr = np.asarray(stderr, dtype=float)
    has_imag = np.abs(mean.imag).max(axis=1) > 1e-12 if np.iscomplexobj(mean) else \
        np.zeros(len(labels), dtype=bool)
    for k, t in enumerate(times):
        for r, lab in enumerate(labels):
            rows.append((float(t), lab, float(mean[r, k].real), float(stderr[r, k])))
            if has_imag[r]:
                rows.append((float(t), lab + ".imag", float(mean[r, k].imag), float(stderr[r, k])))
    return rows


# ---------------------------------------------------------------------------
# Shared builders

def lattice_model(L: int, n_max: int, kappa: float = 1.0, heal_gamma: float = 0.0,
                  noise_rate: float = 0.0, periodic: bool = False) -> LindbladModel:
    """Pair jumps, optionally with bond healing channels and two-way hopping noise."""
    space = FockSpace(L, n_max, periodic)
    jumps = list(pair_jumps(space, kappa)) if kappa > 0 else []
    if heal_gamma > 0:
        jumps += heal_bond_channels(space, heal_gamma)
    if noise_rate > 0:
        jumps += hop_noise_channels(space, noise_rate)
    if not jumps:
        raise ValueError("the model needs at least one positive rate")
    return LindbladModel(None, jumps, space)


def sector_model(model: LindbladModel, initial) -> LindbladModel:
    """Restrict to the conserved sector of ``initial`` (total number, plus parities if kept)."""
    n = int(sum(initial))
    parities = [1 if x % 2 == 0 else -1 for x in initial]
    try:
        return model.in_sector(n, parities)
    except ValueError:
        return model.in_sector(n)


def _check_initial(initial, L: int, n_max: int) -> list[int]:
    if len(initial) != L:
        raise ValueError(f"initial needs {L} occupations, got {len(initial)}")
    if any(not 0 <= x <= n_max for x in initial):
        raise ValueError(f"initial occupations must lie in [0, {n_max}]")
    return list(initial)


def correlator_set(L: int, ref: int) -> list[Observable]:
    """Single and pair correlators from site ``ref`` to every other site."""
    obs = []
    for j in range(L):
        if j != ref:
            obs.append(Observable(f"single_{ref}_{j}", "single", (ref, j)))
    for j in range(L):
        if j != ref:
            obs.append(Observable(f"pair_{ref}_{j}", "pair", (ref, j)))
    return obs


def linear_fit_r2(x, y) -> tuple[float, float, float]:
    """(slope, intercept, R^2) of an ordinary least-squares line."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, icpt = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + icpt)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return float(slope), float(icpt), (1.0 - ss_res / ss_tot) if ss_tot > 0 else 1.0


def light_cone(times, mean, distances, fit_range) -> dict[str, Any]:
    """80% equilibrium times of distance-resolved correlators and a linear fit."""
    t_eq = []
    for k, _ in enumerate(distances):
        try:
            t_eq.append(equilibrium_time((times, np.asarray(mean[k]).real)))
        except NotSaturatedError:
            t_eq.append(float("nan"))
    t_eq = np.array(t_eq)
    dist = np.asarray(distances)
    sel = (dist >= fit_range[0]) & (dist <= fit_range[1])
    out = {"t_eq": [float(x) for x in t_eq], "distances": [int(x) for x in dist]}
    finite = np.all(np.isfinite(t_eq))
    out["all_saturated"] = bool(finite)
    out["non_decreasing"] = bool(finite and np.all(np.diff(t_eq) >= 0))
    if finite and sel.sum() >= 2:
        slope, icpt, r2 = linear_fit_r2(dist[sel], t_eq[sel])
        out.update(fit_slope=slope, fit_intercept=icpt, fit_r2=r2)
    else:
        out.update(fit_slope=None, fit_intercept=None, fit_r2=None)
    return out


def healing_comparison(L: int, n_max: int, kappa: float, noise_rate: float, heal_gamma: float,
                       initial, dt: float, t_final: float, t_sample: float, n_traj: int,
                       seed: int, window_start: float, ref: int | None = None,
                       threads: int = 1) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Steady-window pair correlators versus distance for the ideal, dirty and healed models.

    Every trajectory is first averaged over the samples with ``t >= window_start``;
    means and standard errors are then taken over trajectories. Correlators
    are measured from site ``ref`` (default ``L // 4``) to ``ref + r``.
    Returns ``{variant: (distances, mean, stderr)}``; the dense backend in
    the conserved number sector is used.
    """
    ref = L // 4 if ref is None else ref
    dists = np.arange(1, L - ref)
    obs = tuple(Observable(f"pair_{ref}_{ref + r}", "pair", (ref, ref + r)) for r in dists)
    variants = {"ideal": (0.0, 0.0), "dirty": (noise_rate, 0.0), "healed": (noise_rate, heal_gamma)}
    out = {}
    for v, (noise, heal) in variants.items():
        model = lattice_model(L, n_max, kappa, heal, noise)
        model = model.in_sector(int(sum(initial)))
        cfg = TrajectoryConfig(dt=dt, t_final=t_final, n_traj=n_traj, seed=seed, observables=obs,
                               t_sample=t_sample)
        psi0 = product_state(initial, model.space)
        _, trajs = run_ensemble(model, psi0, cfg, threads=threads, return_trajectories=True)
        sel = cfg.times >= window_start
        per = np.stack([tr.values[:, sel].real.mean(axis=1) for tr in trajs])
        out[v] = (dists, per.mean(axis=0), per.std(axis=0, ddof=1) / np.sqrt(n_traj))
    return out


def healing_order_check(curves, min_distance: int = 3, n_sigma: float = 3.0) -> dict[str, Any]:
    """Pointwise ideal >= healed >= dirty, and ideal - dirty > n_sigma combined stderr."""
    d, ideal, s_i = curves["ideal"]
    _, healed, _ = curves["healed"]
    _, dirty, s_d = curves["dirty"]
    comb = np.sqrt(s_i**2 + s_d**2)
    far = d >= min_distance
    return {
        "ideal_ge_healed": bool(np.all(ideal >= healed)),
        "healed_ge_dirty": bool(np.all(healed >= dirty)),
        "gap_significant": bool(np.all((ideal - dirty)[far] > n_sigma * comb[far])),
        "min_gap_sigma": float(np.min((ideal - dirty)[far] / comb[far])) if far.any() else None,
    }


def defect_sites(initial) -> list[int]:
    return [j for j, n in enumerate(initial) if n % 2]


def quantum_classical_defects(L: int, n_max: int, kappa: float, heal_gamma: float, initial,
                              dt: float, t_final: float, t_sample: float, n_traj: int,
                              n_hist: int, seed: int, chi_max: int = 64,
                              svd_cutoff: float = 1e-10, threads: int = 1):
    """Defect density from a TEBD ensemble and from open-chain exact-rate KMC.

    The classical chain uses the defects of ``initial`` as domain walls on the
    ``L`` bonds of an ``L + 1`` spin chain with fixed ends. Returns
    ``(times, (mean_q, err_q), (mean_c, err_c))``.
    """
    model = lattice_model(L, n_max, kappa, heal_gamma)
    obs = (Observable("defect_density", "defect_density"),)
    cfg = TrajectoryConfig(dt=dt, t_final=t_final, n_traj=n_traj, seed=seed, observables=obs,
                           t_sample=t_sample)
    q = run_ensemble(model, list(initial), cfg, backend="mps", chi_max=chi_max,
                     svd_cutoff=svd_cutoff, threads=threads)
    table = _gl.RateTable("exact", heal_gamma, 0.0)
    c = _gl.ensemble(L, table, t_final, n_hist, seed=seed, init=("from_defects", defect_sites(initial)),
                     periodic=False, grid=q.times, threads=threads)
    return q.times, (q.mean[0].real, q.stderr[0]), (c.mean, c.stderr)


# ---------------------------------------------------------------------------
# Experiments

_LATTICE = {
    "L": Param("int", 4, "number of sites"),
    "n_max": Param("int", 4, "Fock cutoff per site"),
    "kappa": Param("float", 1.0, "pair-jump rate"),
    "heal_gamma": Param("float", 0.0, "healing rate (bond channels)"),
    "noise_rate": Param("float", 0.0, "single-photon hopping noise rate, each direction"),
    "initial": Param("ints", "2,0,2,0", "initial occupations"),
}


class Experiment:
    name = ""
    schema: dict[str, Param] = {}
    description = ""

    def prepare(self, params: dict[str, Any], seed: int, threads: int) -> Callable[[], Outcome]:
        raise NotImplementedError


class DarkStateVerify(Experiment):
    name = "darkstate-verify"
    description = "construct a dark state, report its residual and correlator table"
    schema = {
        "L": Param("int", 4),
        "n_pairs": Param("int", 2),
        "n_max": Param("int", 4),
        "defects": Param("ints", ""),
    }

    def prepare(self, p, seed, threads):
        spec = DarkStateSpec(p["L"], p["n_pairs"], p["n_max"], tuple(p["defects"]))
        psi = dark_state(spec)

        def run():
            L = p["L"]
            rows = []
            single_off, pair_off = [], []
            for order in ("single", "pair"):
                for i in range(L):
                    for j in range(L):
                        c = correlator(psi, i, j, order)
                        rows.append((i, j, order, float(c.real), float(c.imag)))
                        if i != j:
                            (single_off if order == "single" else pair_off).append(c)
            pair_off = np.array(pair_off)
            summary = {
                "dark_residual": dark_residual(psi, spec.space),
                "n_photons": spec.n_photons,
                "dimension": spec.space.dim,
                "max_abs_single_offdiagonal": float(np.max(np.abs(single_off))) if single_off else 0.0,
                "pair_offdiagonal_spread": float(np.ptp(pair_off.real) + np.ptp(pair_off.imag))
                if pair_off.size else 0.0,
            }
            return Outcome({"dark_correlators.csv": Table(DARK_HEADER, rows)}, summary)

        return run


class LindbladRun(Experiment):
    name = "lindblad-run"
    description = "exact master-equation evolution with correlators and dark-state fidelity"
    schema = dict(_LATTICE, **{
        "t_final": Param("float", 20.0),
        "n_times": Param("int", 41),
        "correlator_ref": Param("int", 0),
        "sector": Param("bool", True, "restrict to the conserved sector of the initial state"),
        "rtol": Param("float", 1e-10),
        "atol": Param("float", 1e-14),
    })

    def prepare(self, p, seed, threads):
        init = _check_initial(p["initial"], p["L"], p["n_max"])
        full = lattice_model(p["L"], p["n_max"], p["kappa"], p["heal_gamma"], p["noise_rate"])
        model = sector_model(full, init) if p["sector"] else full
        if p["n_times"] < 2 or not p["t_final"] > 0:
            raise ValueError("need n_times >= 2 and t_final > 0")
        if not 0 <= p["correlator_ref"] < p["L"]:
            raise ValueError("correlator_ref outside the chain")
        t = np.linspace(0.0, p["t_final"], p["n_times"])
        obs = correlator_set(p["L"], p["correlator_ref"])
        space = full.space

        def run():
            psi0 = product_state(init, space)
            rho0 = DensityMatrix.from_state(model.reduce(psi0), space, model.basis)
            traj = evolve(model, rho0, t, rtol=p["rtol"], atol=p["atol"])
            ops = [o.dense_matrix(model) for o in obs]
            n_op = model.project(number_total(space))
            vals = np.array([observables(r, ops) for r in traj]).T
            n_t = np.array([observables(r, [n_op])[0].real for r in traj])
            summary = {
                "trace_drift": float(max(abs(np.trace(r.matrix) - 1) for r in traj)),
                "number_drift": float(np.max(np.abs(n_t - n_t[0]))),
                "max_abs_single_correlator": float(np.max(np.abs(vals[: p["L"] - 1]))),
            }
            n_photons = int(sum(init))
            if (n_photons % 2 == 0 and all(x % 2 == 0 for x in init) and p["heal_gamma"] == 0
                    and p["noise_rate"] == 0 and p["n_max"] >= n_photons):
                dark = dark_state(DarkStateSpec(p["L"], n_photons // 2, p["n_max"]))
                target = DensityMatrix.from_state(model.reduce(dark), space, model.basis)
                summary["final_dark_fidelity"] = fidelity(traj[-1], target)
            rows = series_rows(t, [o.label for o in obs], vals, np.zeros(vals.shape))
            return Outcome({"correlators.csv": Table(SERIES_HEADER, rows)}, summary)

        return run


class TrajectoryRun(Experiment):
    name = "trajectory-run"
    description = "quantum-trajectory ensemble (dense or MPS), optional exact overlay or healing comparison"
    schema = dict(_LATTICE, **{
        "dt": Param("float", 1e-3),
        "t_final": Param("float", 5.0),
        "t_sample": Param("float", 0.1),
        "n_traj": Param("int", 100),
        "backend": Param("str", "dense"),
        "propagator": Param("str", "exact"),
        "chi_max": Param("int", 64),
        "svd_cutoff": Param("float", 1e-10),
        "correlator_ref": Param("int", 0),
        "sector": Param("bool", True),
        "exact_overlay": Param("bool", False, "also write exact master-equation curves"),
        "healing_comparison": Param("bool", False,
                                    "run ideal/dirty/healed variants and write distance curves"),
        "window_start": Param("float", 0.0, "start of the steady window for healing_comparison"),
    })

    def prepare(self, p, seed, threads):
        init = _check_initial(p["initial"], p["L"], p["n_max"])
        if p["backend"] not in ("dense", "mps"):
            raise ValueError(f"backend must be dense or mps, got {p['backend']!r}")
        if p["healing_comparison"]:
            if not (p["noise_rate"] > 0 and p["heal_gamma"] > 0):
                raise ValueError("healing_comparison needs noise_rate > 0 and heal_gamma > 0")
            if not 0 <= p["window_start"] < p["t_final"]:
                raise ValueError("window_start must lie in [0, t_final)")
            for noise, heal in ((0.0, 0.0), (p["noise_rate"], 0.0),
                                (p["noise_rate"], p["heal_gamma"])):
                m = lattice_model(p["L"], p["n_max"], p["kappa"], heal, noise)
                TrajectoryConfig(p["dt"], p["t_final"], p["n_traj"], seed,
                                 t_sample=p["t_sample"]).validate(m)
            return lambda: self._healing(p, init, seed, threads)
        full = lattice_model(p["L"], p["n_max"], p["kappa"], p["heal_gamma"], p["noise_rate"])
        model = sector_model(full, init) if (p["sector"] and p["backend"] == "dense") else full
        obs = tuple(correlator_set(p["L"], p["correlator_ref"]))
        cfg = TrajectoryConfig(p["dt"], p["t_final"], p["n_traj"], seed, obs,
                               t_sample=p["t_sample"])
        cfg.validate(model)

        def run():
            psi0 = product_state(init, full.space) if p["backend"] == "dense" else init
            s = run_ensemble(model, psi0, cfg, backend=p["backend"], threads=threads,
                             propagator=p["propagator"], chi_max=p["chi_max"],
                             svd_cutoff=p["svd_cutoff"])
            rows = series_rows(s.times, s.labels, s.mean, s.stderr)
            summary = {"n_traj": s.n_traj, "n_samples": len(s.times)}
            if p["exact_overlay"]:
                ops = [o.dense_matrix(model) for o in obs]
                rho0 = DensityMatrix.from_state(model.reduce(product_state(init, full.space)),
                                                full.space, model.basis)
                ex = evolve(model, rho0, s.times, rtol=1e-10, atol=1e-14)
                ev = np.array([observables(r, ops) for r in ex]).T
                rows += series_rows(s.times, [lab + "/exact" for lab in s.labels], ev,
                                    np.zeros(ev.shape))
                dev = np.abs(s.mean - ev)
                z = dev / np.maximum(s.stderr, 1e-300)
                ok = dev <= 3 * s.stderr + 1e-8
                summary.update(max_abs_deviation=float(dev.max()),
                               fraction_within_3_stderr=float(ok.mean()),
                               max_z_resolved=float(z[s.stderr > 0].max()) if np.any(s.stderr > 0)
                               else None)
            return Outcome({"correlators.csv": Table(SERIES_HEADER, rows)}, summary)

        return run

    @staticmethod
    def _healing(p, init, seed, threads) -> Outcome:
        curves = healing_comparison(p["L"], p["n_max"], p["kappa"], p["noise_rate"],
                                    p["heal_gamma"], init, p["dt"], p["t_final"], p["t_sample"],
                                    p["n_traj"], seed, p["window_start"], threads=threads)
        rows = [(v, int(d), float(m), float(e))
                for v, (ds, ms, es) in curves.items() for d, m, e in zip(ds, ms, es)]
        return Outcome({"distance.csv": Table(DISTANCE_HEADER, rows)}, healing_order_check(curves))


class TebdRun(Experiment):
    name = "tebd-run"
    description = "MPS trajectory ensemble with light-cone analysis or a classical defect comparison"
    schema = dict(_LATTICE, **{
        "L": Param("int", 12),
        "n_max": Param("int", 2),
        "initial": Param("ints", "2,0,2,0,2,0,2,0,2,0,2,0"),
        "dt": Param("float", 0.003125),
        "t_final": Param("float", 6.0),
        "t_sample": Param("float", 0.05),
        "n_traj": Param("int", 100),
        "chi_max": Param("int", 64),
        "svd_cutoff": Param("float", 1e-10),
        "kmc_histories": Param("int", 0, "if > 0, compare defect density with exact-rate KMC"),
    })

    def prepare(self, p, seed, threads):
        init = _check_initial(p["initial"], p["L"], p["n_max"])
        model = lattice_model(p["L"], p["n_max"], p["kappa"], p["heal_gamma"], p["noise_rate"])
        L = p["L"]
        dists = list(range(1, L))
        obs = tuple(Observable(f"pair_r{r}", "pair_distance", (r,)) for r in dists) + \
            (Observable("defect_density", "defect_density"),)
        cfg = TrajectoryConfig(p["dt"], p["t_final"], p["n_traj"], seed, obs, t_sample=p["t_sample"])
        cfg.validate(model)
        if p["kmc_histories"] == 1 or p["kmc_histories"] < 0:
            raise ValueError("kmc_histories must be 0 or at least 2")
        if p["kmc_histories"] and not p["heal_gamma"] > 0:
            raise ValueError("the classical comparison needs heal_gamma > 0")

        def run():
            s = run_ensemble(model, init, cfg, backend="mps", threads=threads,
                             chi_max=p["chi_max"], svd_cutoff=p["svd_cutoff"])
            rows = series_rows(s.times, s.labels, s.mean, s.stderr)
            cone = light_cone(s.times, s.mean[: len(dists)], dists, (2, L // 2))
            tables = {"correlators.csv": Table(SERIES_HEADER, rows),
                      "lightcone.csv": Table(LIGHTCONE_HEADER,
                                             list(zip(cone["distances"], cone["t_eq"])))}
            summary = {"n_traj": s.n_traj, "light_cone": cone}
            if p["kmc_histories"]:
                table = _gl.RateTable("exact", p["heal_gamma"], 0.0)
                c = _gl.ensemble(L, table, p["t_final"], p["kmc_histories"], seed=seed,
                                 init=("from_defects", defect_sites(init)), periodic=False,
                                 grid=s.times, threads=threads)
                rows += series_rows(s.times, ["defect_density/kmc"], c.mean[None, :],
                                    c.stderr[None, :])
                q, qe = s.mean[-1].real, s.stderr[-1]
                comb = np.sqrt(qe**2 + c.stderr**2)
                resolved = comb > 0
                z = np.abs(q - c.mean)[resolved] / comb[resolved]
                summary["defect_comparison"] = {
                    "max_z": float(z.max()) if z.size else 0.0,
                    "within_3_stderr": bool(np.all(np.abs(q - c.mean) <= 3 * comb)),
                }
            return Outcome(tables, summary)

        return run


class GlauberRun(Experiment):
    name = "glauber-run"
    description = "kinetic Monte Carlo of defect diffusion and annihilation"
    schema = {
        "L": Param("int", 100),
        "mode": Param("str", "exact", "exact or glauber rates"),
        "gamma": Param("float", 1.0),
        "h": Param("float", 0.0),
        "t_final": Param("float", 1000.0),
        "n_hist": Param("int", 1000),
        "init": Param("str", "random", "random or all_up"),
        "periodic": Param("bool", True),
        "n_points": Param("int", 60),
        "t_min": Param("float", 0.01),
        "fit_lo": Param("float", 10.0, "power-law fit window start (h = 0)"),
        "fit_hi": Param("float", 1000.0, "power-law fit window end (h = 0)"),
    }

    def prepare(self, p, seed, threads):
        table = _gl.RateTable(p["mode"], p["gamma"], p["h"])
        if p["init"] not in ("random", "all_up"):
            raise ValueError(f"init must be random or all_up, got {p['init']!r}")
        if p["n_hist"] < 2 or p["L"] < 3 or p["n_points"] < 2:
            raise ValueError("need n_hist >= 2, L >= 3 and n_points >= 2")
        if not 0 < p["t_min"] < p["t_final"]:
            raise ValueError("need 0 < t_min < t_final")
        grid = _gl.log_grid(p["t_final"], p["n_points"], p["t_min"])

        def run():
            r = _gl.ensemble(p["L"], table, p["t_final"], p["n_hist"], seed=seed, init=p["init"],
                             periodic=p["periodic"], grid=grid, threads=threads)
            rows = series_rows(r.times, ["m"], r.mean[None, :], r.stderr[None, :])
            summary: dict[str, Any] = {"n_hist": r.n_hist, "final_density": float(r.mean[-1])}
            if p["h"] == 0:
                lo, hi = p["fit_lo"], min(p["fit_hi"], p["t_final"])
                slope, err = _gl.fit_power_exponent(r, (lo, hi))
                summary.update(exponent=slope, exponent_stderr=err, fit_window=[lo, hi])
            else:
                ss = _gl.steady_and_relaxation(r, table)
                summary.update(m_s=ss.m_s, tau=ss.tau, m_s_analytic=ss.m_s_analytic,
                               tau_analytic=ss.tau_analytic)
            return Outcome({"density.csv": Table(SERIES_HEADER, rows)}, summary)

        return run


class CqedValidate(Experiment):
    name = "cqed-validate"
    description = "circuit-QED elimination checks and full-vs-effective sweeps"
    schema = {
        "n_max": Param("int", 2),
        "g1": Param("float", 1.0),
        "g2": Param("float", 1.0),
        "g3": Param("float", 0.0),
        "delta1": Param("float", 20.0),
        "delta2": Param("float", 20.0),
        "chi": Param("float", 0.0),
        "kappa_f": Param("float", 1.0),
        "include_tls": Param("bool", False),
        "initial": Param("ints", "2,0"),
        "t_final": Param("float", 40.0),
        "n_times": Param("int", 41),
        "kappa_f_sweep": Param("floats", "0.25,0.5,1.0"),
        "delta_sweep": Param("floats", "10,20,40"),
        "sw_g1": Param("float", 1.0, "couplings used for the Schrieffer-Wolff scaling check"),
        "sw_g2": Param("float", 0.8),
        "sw_g3": Param("float", 0.7),
        "sw_chi": Param("float", 0.5),
        "kerr_chi": Param("float", 0.5, "Kerr strength for the cancellation check"),
    }

    def prepare(self, p, seed, threads):
        base = dict(n_max=p["n_max"], g1=p["g1"], g2=p["g2"], g3=p["g3"], delta1=p["delta1"],
                    delta2=p["delta2"], chi=p["chi"], kappa_f=p["kappa_f"],
                    include_tls=p["include_tls"])
        params = _cqed.CqedParams(**base)
        if len(p["initial"]) != 2 or any(not 0 <= x <= p["n_max"] for x in p["initial"]):
            raise ValueError("initial must give two cavity occupations within the cutoff")
        sweeps = ([("kappa_f", v, _cqed.CqedParams(**dict(base, kappa_f=v))) for v in p["kappa_f_sweep"]]
                  + [("delta", v, _cqed.CqedParams(**dict(base, delta1=v, delta2=v)))
                     for v in p["delta_sweep"]])
        t = np.linspace(0.0, p["t_final"], p["n_times"])
        space = FockSpace(2, p["n_max"])
        psi0 = np.asarray(product_state(p["initial"], space).amplitudes)

        def run():
            rows = []
            by_sweep: dict[str, list[float]] = {}
            for name, v, q in sweeps:
                res = _cqed.reduction_error(q, t, psi0)
                rows.append((name, float(v), res.max_distance,
                             float(res.excited_population.max())))
                by_sweep.setdefault(name, []).append(res.max_distance)
            jump_p = _cqed.CqedParams(**dict(base, n_max=max(3, p["n_max"])))
            target = pair_jump(0, FockSpace(2, jump_p.n_max)).matrix.toarray()
            resid, scale = _cqed.scale_matched_distance(_cqed.effective_jump_from_full(jump_p),
                                                        target)
            kerr = _cqed.kerr_cancelling_params(p["kerr_chi"], n_max=p["n_max"])
            sw = []
            for d in (p["delta1"], 2 * p["delta1"]):
                sw_p = _cqed.CqedParams(n_max=p["n_max"], g1=p["sw_g1"], g2=p["sw_g2"],
                                        g3=p["sw_g3"], delta1=d, delta2=1.3 * d, chi=p["sw_chi"],
                                        include_tls=True)
                sw.append(_cqed.schrieffer_wolff_check(sw_p).deviation)
            summary = {
                "jump_scale_residual": resid,
                "jump_scale": [scale.real, scale.imag],
                "kerr_residual": float(np.abs(_cqed.effective_hamiltonian(kerr)).max()),
                "sw_deviation": sw,
                "sw_ratio": sw[0] / sw[1] if sw[1] > 0 else None,
                "effective_rate": _cqed.effective_rate(params),
            }
            for name, vals in by_sweep.items():
                summary[f"{name}_sweep_max_distance"] = vals
                summary[f"{name}_sweep_monotone_decreasing"] = bool(np.all(np.diff(vals) < 0))
            return Outcome({"sweep.csv": Table(SWEEP_HEADER, rows)}, summary)

        return run


EXPERIMENTS: dict[str, Experiment] = {e.name: e for e in (
    DarkStateVerify(), LindbladRun(), TrajectoryRun(), TebdRun(), GlauberRun(), CqedValidate())}
