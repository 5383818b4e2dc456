import csv
import json
from pathlib import Path

import pytest

from pairsim import __version__
from pairsim.cli import main
from pairsim.experiments import (
    CSV_SCHEMA_VERSION, DARK_HEADER, DISTANCE_HEADER, EXPERIMENTS, LIGHTCONE_HEADER,
    SERIES_HEADER, SWEEP_HEADER,
)
from pairsim.recipes import RECIPES


def write_cfg(path: Path, experiment: str, params: dict, seed: int = 0) -> Path:
    lines = ["[run]", f"experiment = {experiment}", f"seed = {seed}", "", "[parameters]"]
    lines += [f"{k} = {v}" for k, v in params.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


SMALL = {
    "darkstate-verify": {"L": 3, "n_pairs": 1, "n_max": 2},
    "lindblad-run": {"L": 2, "n_max": 2, "initial": "2,0", "t_final": 1.0, "n_times": 5},
    "trajectory-run": {"L": 2, "n_max": 2, "initial": "2,0", "dt": 0.003, "t_final": 0.3,
                       "t_sample": 0.03, "n_traj": 4},
    "tebd-run": {"L": 4, "initial": "2,0,2,0", "dt": 0.003125, "t_final": 0.25,
                 "t_sample": 0.05, "n_traj": 2},
    "glauber-run": {"L": 20, "h": 0.0, "t_final": 10.0, "n_hist": 20, "n_points": 10,
                    "fit_lo": 1.0, "fit_hi": 10.0},
    "cqed-validate": {"t_final": 2.0, "n_times": 3, "kappa_f_sweep": "0.5,1.0",
                      "delta_sweep": "10,20"},
}


def test_schema_constants_are_pinned():
    assert CSV_SCHEMA_VERSION == 1
    assert SERIES_HEADER == ("t", "observable", "mean", "stderr")
    assert DARK_HEADER == ("i", "j", "order", "re", "im")
    assert DISTANCE_HEADER == ("variant", "distance", "mean", "stderr")
    assert SWEEP_HEADER == ("sweep", "value", "max_trace_distance", "max_excited_population")
    assert LIGHTCONE_HEADER == ("distance", "t_eq")


def test_all_experiments_and_recipes_registered():
    assert set(EXPERIMENTS) == {"darkstate-verify", "lindblad-run", "trajectory-run", "tebd-run",
                                "glauber-run", "cqed-validate"}
    assert set(RECIPES) == {"cooling-small", "light-cone", "defect-decay",
                            "defect-agreement", "healing-comparison", "cqed-sweep"}
    for r in RECIPES.values():
        assert r.experiment in EXPERIMENTS
        assert set(r.parameters) <= set(EXPERIMENTS[r.experiment].schema)


@pytest.mark.parametrize("experiment", sorted(SMALL))
def test_every_experiment_runs(tmp_path, experiment):
    cfg = write_cfg(tmp_path / "x.cfg", experiment, SMALL[experiment], seed=3)
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["experiment"] == experiment and man["seed"] == 3
    assert man["version"] == __version__ and man["csv_schema_version"] == CSV_SCHEMA_VERSION
    summary = json.loads((out / "summary.json").read_text())
    assert isinstance(summary, dict) and summary
    for name, header in man["files"].items():
        rows = read_csv(out / name)
        assert rows[0] == header and len(rows) > 1


def test_series_layout(tmp_path):
    cfg = write_cfg(tmp_path / "run.cfg", "lindblad-run", SMALL["lindblad-run"])
    out = tmp_path / "o"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    raw = (out / "correlators.csv").read_bytes()
    assert raw.startswith(b"t,observable,mean,stderr\r\n")
    rows = read_csv(out / "correlators.csv")[1:]
    assert {r[1] for r in rows} >= {"pair_0_1", "single_0_1"}
    float(rows[0][0]), float(rows[0][2])


def test_rerun_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path / "glauber.cfg", "glauber-run", SMALL["glauber-run"])
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "seed=7", "--out", str(a)]) == 0
    assert main(["run", str(cfg), "seed=7", "--out", str(b)]) == 0
    for f in ("density.csv", "summary.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_threads_do_not_change_outputs(tmp_path):
    cfg = write_cfg(tmp_path / "t.cfg", "trajectory-run", SMALL["trajectory-run"], seed=5)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "--out", str(a)]) == 0
    assert main(["run", str(cfg), "--out", str(b), "--threads", "2"]) == 0
    assert (a / "correlators.csv").read_bytes() == (b / "correlators.csv").read_bytes()


def test_manifest_roundtrip(tmp_path):
    cfg = write_cfg(tmp_path / "t.cfg", "trajectory-run", SMALL["trajectory-run"], seed=9)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "--out", str(a)]) == 0
    assert main(["run", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert (a / "correlators.csv").read_bytes() == (b / "correlators.csv").read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    ma.pop("output_dir"), mb.pop("output_dir")
    assert ma == mb


def test_overrides_and_set_flag(tmp_path):
    cfg = write_cfg(tmp_path / "d.cfg", "darkstate-verify", SMALL["darkstate-verify"])
    out = tmp_path / "o"
    assert main(["run", str(cfg), "L=4", "--set", "n_pairs=2", "--set", "n_max=4",
                 "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["parameters"]["L"] == 4 and man["parameters"]["n_pairs"] == 2
    assert json.loads((out / "summary.json").read_text())["dark_residual"] < 1e-12


def test_unknown_key_is_rejected(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "bad.cfg", "darkstate-verify", {"L": 3, "colour": "red"})
    out = tmp_path / "o"
    assert main(["run", str(cfg), "--out", str(out)]) == 2
    assert "colour" in capsys.readouterr().err
    assert not out.exists()


def test_missing_file_and_bad_values(tmp_path):
    assert main(["run", str(tmp_path / "nope.cfg")]) == 2
    bad = write_cfg(tmp_path / "b.cfg", "darkstate-verify", {"L": "three"})
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2
    invalid = write_cfg(tmp_path / "i.cfg", "darkstate-verify", {"L": 1})
    assert main(["run", str(invalid), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()
    (tmp_path / "m.cfg").write_text("[run\nexperiment = x\n")
    assert main(["run", str(tmp_path / "m.cfg")]) == 2
    (tmp_path / "u.cfg").write_text("[run]\nexperiment = teleport\n")
    assert main(["run", str(tmp_path / "u.cfg")]) == 2
    assert main(["--threads", "0", "--recipe", "cqed-sweep"]) == 2


def test_recipe_listing(capsys):
    assert main(["--list-recipes"]) == 0
    text = capsys.readouterr().out
    for name in RECIPES:
        assert name in text
    assert main(["--show-recipe", "defect-decay"]) == 0
    assert "experiment = glauber-run" in capsys.readouterr().out
    assert main(["--show-recipe", "nope"]) == 2


def test_shown_recipe_is_a_valid_config(tmp_path, capsys):
    main(["--show-recipe", "cqed-sweep"])
    cfg = tmp_path / "c.cfg"
    cfg.write_text(capsys.readouterr().out)
    out = tmp_path / "o"
    assert main(["run", str(cfg), "t_final=2", "n_times=3", "kappa_f_sweep=0.5,1",
                 "delta_sweep=10,20", "--out", str(out)]) == 0
    assert read_csv(out / "sweep.csv")[0] == list(SWEEP_HEADER)


def test_runtime_failure_exit_code(tmp_path):
    # a production run too short to reach its plateau fails after validation
    cfg = write_cfg(tmp_path / "t.cfg", "glauber-run",
                    {"L": 20, "mode": "glauber", "h": 0.01, "t_final": 1.0, "n_hist": 4,
                     "n_points": 5})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 3
