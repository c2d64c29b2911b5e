import json
from pathlib import Path

import numpy as np
import pytest

from fellerstop.cli import main
from fellerstop.core import InvalidInput
from fellerstop.experiments import ExperimentConfig, build_generator, output_dir

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def load(name):
    return json.loads((CONFIGS / name).read_text())


def write(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_shipped_configs_round_trip(name):
    cfg = ExperimentConfig.load(CONFIGS / name)
    again = ExperimentConfig.from_dict(json.loads(cfg.dumps()))
    assert again.to_dict() == cfg.to_dict()
    assert main(["validate", str(CONFIGS / name), "--quiet"]) == 0


@pytest.mark.parametrize(
    "patch,fld",
    [
        ({"payoff": {"c1": 4.0, "c2": 1.0}}, "payoff.c1"),
        ({"discount_a": -1}, "discount_a"),
        ({"grid": {"lo": 0, "hi": 12, "n": 2}}, "grid.n"),
        ({"process": {"type": "ou"}}, "process.type"),
        ({"solver": {"bogus": 1}}, "solver"),
        ({"schema_version": 7}, "schema_version"),
        ({"extra_key": 1}, "extra_key"),
    ],
)
def test_invalid_configs_name_the_field(tmp_path, capsys, patch, fld):
    d = load("reflected_straddle.json")
    d.update(patch)
    with pytest.raises(InvalidInput) as exc:
        ExperimentConfig.from_dict(d)
    assert exc.value.field == fld
    assert main(["validate", write(tmp_path, d)]) == 2
    assert f"field: {fld}" in capsys.readouterr().err


def test_process_errors_exit_two(tmp_path, capsys):
    d = load("reflected_straddle.json")
    d["process"] = {"type": "skew_bm", "beta": 0.5}
    assert main(["solve", write(tmp_path, d), "--out", str(tmp_path / "o")]) == 2
    assert "zero-not-interior" in capsys.readouterr().err


def test_missing_file_exit_two(tmp_path):
    assert main(["validate", str(tmp_path / "nope.json")]) == 2


def test_solve_writes_outputs(tmp_path):
    out = tmp_path / "out"
    code = main(["solve", str(CONFIGS / "reflected_straddle.json"), "--grid-n", "241", "--out", str(out), "--quiet"])
    assert code == 0
    value = (out / "value.csv").read_text().splitlines()
    assert value[0] == "x,value" and len(value) == 242
    solve = json.loads((out / "solve.json").read_text())
    assert solve["converged"] and len(solve["boundaries"][0]) == 1
    region = (out / "stopping_region.csv").read_text().splitlines()
    assert region[0] == "x,stop"


def test_solve_warning_exit_three(tmp_path):
    d = load("reflected_straddle.json")
    d["solver"] = {"max_inner_iters": 1, "inner_solver": "contraction"}
    d["grid"]["n"] = 121
    assert main(["solve", write(tmp_path, d), "--out", str(tmp_path / "o"), "--quiet"]) == 3
    assert (tmp_path / "o" / "value.csv").exists()


def test_crosscheck_passes(tmp_path):
    out = tmp_path / "cc"
    assert main(["crosscheck", str(CONFIGS / "reflected_straddle.json"), "--out", str(out), "--quiet"]) == 0
    verdict = json.loads((out / "crosscheck.json").read_text())
    names = [c["name"] for c in verdict["checks"]]
    assert "solver_vs_analytic_sup" in names
    assert sum(n.startswith("mc_start_") for n in names) == 5


def test_crosscheck_coarse_grid_fails(tmp_path):
    # a 1.0 grid spacing is too coarse for the 5e-3 closed-form tolerance
    d = load("reflected_straddle.json")
    d["grid"]["n"] = 13
    d["mc"] = {"enabled": False}
    assert main(["crosscheck", write(tmp_path, d), "--out", str(tmp_path / "o"), "--quiet"]) == 1
    verdict = json.loads((tmp_path / "o" / "crosscheck.json").read_text())
    assert not verdict["pass"]


def test_crosscheck_semi_markov(tmp_path):
    out = tmp_path / "sm"
    d = load("semi_markov_constant.json")
    d["grid"]["n"] = 121
    assert main(["crosscheck", write(tmp_path, d), "--out", str(out), "--quiet"]) == 0
    checks = {c["name"]: c for c in json.loads((out / "crosscheck.json").read_text())["checks"]}
    assert checks["clock_variation"]["pass"] and checks["matches_compound_poisson"]["pass"]


def test_seed_override_changes_mc(tmp_path):
    d = load("reflected_straddle.json")
    d["grid"]["n"] = 61
    d["mc"] = {"n_paths": 2000, "start_nodes": [5]}
    path = write(tmp_path, d)
    means = []
    for seed in ("1", "1", "2"):
        out = tmp_path / f"s{len(means)}"
        main(["crosscheck", path, "--seed", seed, "--out", str(out), "--quiet"])
        checks = json.loads((out / "crosscheck.json").read_text())["checks"]
        means.append([c["mc_mean"] for c in checks if c["name"].startswith("mc_")][0])
    assert means[0] == means[1] != means[2]


def test_output_dir_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("FELLER_STOP_OUT", str(tmp_path / "env"))
    assert output_dir() == tmp_path / "env"
    assert output_dir(str(tmp_path / "cli")) == tmp_path / "cli"


def test_every_process_tag_builds():
    base = load("reflected_straddle.json")
    base["grid"] = {"lo": -6.0, "hi": 6.0, "n": 61}
    specs = [
        {"type": "bm", "boundary": {"sticky_reflecting": 2.0}},
        {"type": "skew_bm", "beta": 0.3},
        {"type": "piecewise_diffusion", "breakpoints": [0.0], "sigma": [1.0, 2.0], "rho": [1.0, 1.0]},
        {"type": "levy", "drift": 0.1, "diffusion": 0.5, "jump_rate": 1.0, "jump_dist": {"atoms": [-1.0], "weights": [1.0]}},
        {"type": "bm_compound_poisson", "jump_rate": 1.0, "jump_dist": {"exponential": {"gamma": 1.0, "n_atoms": 10}}},
        {"type": "regime_switching", "regimes": ["sticky", "reflected"], "q": [[0, 0.1], [0.1, 0]]},
        {"type": "semi_markov", "hazard": {"kind": "beta_prime"}, "jump_dist": {"atoms": [0.4], "weights": [1.0]}, "clock_max": 20.0, "clock_n": 10},
    ]
    for spec in specs:
        d = dict(base, process=spec)
        G = build_generator(ExperimentConfig.from_dict(d))
        assert np.abs(G.row_sums()).max() <= 1e-9


def test_figure_command(tmp_path):
    assert main(["figure", "jump_boundary_fig", "--grid-n", "241", "--out", str(tmp_path), "--quiet"]) == 0
    assert (tmp_path / "figure1_values.csv").exists()
    assert (tmp_path / "figure1_exercise_points.csv").exists()
