"""Built-in named configurations, scaled to run on a laptop.

Each recipe is an ordinary experiment configuration; ``pairsim --show-recipe
NAME`` prints it as an INI file that can be edited and passed to ``--config``.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Recipe:
    name: str
    experiment: str
    description: str
    parameters: dict = field(default_factory=dict)
    seed: int = 0

    def to_ini(self) -> str:
        lines = [f"# {self.description}", "[run]", f"experiment = {self.experiment}",
                 f"seed = {self.seed}", "", "[parameters]"]
        lines += [f"{k} = {v}" for k, v in self.parameters.items()]
        return "\n".join(lines) + "\n"


RECIPES: dict[str, Recipe] = {r.name: r for r in (
    Recipe(
        "cooling-small", "trajectory-run",
        "L=4 pair-jump chain from |2,0,2,0>: trajectory ensemble overlaid on exact evolution",
        {"L": 4, "n_max": 4, "kappa": 1.0, "initial": "2,0,2,0", "dt": 1e-4, "t_final": 10.0,
         "t_sample": 0.1, "n_traj": 200, "exact_overlay": "true"},
        seed=1,
    ),
    Recipe(
        "light-cone", "tebd-run",
        "L=12 TEBD ensemble at unit density: equilibrium time of pair correlators versus distance",
        {"L": 12, "n_max": 2, "kappa": 1.0, "initial": ",".join(["2,0"] * 6), "dt": 0.003125,
         "t_final": 6.0, "t_sample": 0.05, "n_traj": 100, "chi_max": 64, "svd_cutoff": 1e-10},
        seed=2024,
    ),
    Recipe(
        "defect-decay", "glauber-run",
        "exact-rate defect annihilation on L=100, 1000 histories: m(t) power-law fit on [10, 1000]",
        {"L": 100, "mode": "exact", "gamma": 1.0, "h": 0.0, "t_final": 1000.0, "n_hist": 1000,
         "init": "random", "n_points": 60, "fit_lo": 10.0, "fit_hi": 1000.0},
        seed=7,
    ),
    Recipe(
        "defect-agreement", "tebd-run",
        "L=10 pair jumps plus healing from alternating single photons, against exact-rate KMC",
        {"L": 10, "n_max": 2, "kappa": 1.0, "heal_gamma": 1.0, "initial": ",".join(["1,0"] * 5),
         "dt": 0.003125, "t_final": 4.0, "t_sample": 0.1, "n_traj": 100,
         "kmc_histories": 4000},
        seed=9,
    ),
    Recipe(
        "healing-comparison", "trajectory-run",
        "L=8 steady pair correlators versus distance for ideal, dirty and healed chains",
        {"L": 8, "n_max": 2, "kappa": 1.0, "noise_rate": 0.05, "heal_gamma": 1.0,
         "initial": ",".join(["2,0"] * 4), "dt": 0.003125, "t_final": 30.0, "t_sample": 0.5,
         "n_traj": 100, "healing_comparison": "true", "window_start": 10.0},
        seed=10,
    ),
    Recipe(
        "cqed-sweep", "cqed-validate",
        "two-cavity circuit-QED elimination: jump/Kerr/scaling checks and kappa_f, delta sweeps",
        {"n_max": 2, "g1": 1.0, "g2": 1.0, "delta1": 20.0, "kappa_f": 1.0, "initial": "2,0",
         "t_final": 40.0, "n_times": 41, "kappa_f_sweep": "0.25,0.5,1.0",
         "delta_sweep": "10,20,40"},
        seed=0,
    ),
)}
