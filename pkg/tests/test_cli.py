import json

import numpy as np
import pytest

from iwvi_lab.cli import main
from iwvi_lab.config import ConfigError, grid_from_config, load_config, shipped_dataset_path
from iwvi_lab.models import EULER_GAMMA, load_dataset


def run(capsys, *argv):
    assert main(list(argv)) == 0
    return json.loads(capsys.readouterr().out)


def test_shipped_data():
    x = load_dataset(shipped_dataset_path())
    assert x.shape == (100,)


def test_estimate_k1_analytic(capsys):
    out = run(capsys, "estimate", "--estimator", "iwvi", "--k", "1", "--inner", "analytic")
    x = load_dataset(shipped_dataset_path())
    assert out["xi_hat"]["theta"][0] == pytest.approx(x.mean() - EULER_GAMMA, abs=1e-6)
    assert out["master_seed"] == 2024


def test_estimate_deterministic(capsys, tmp_path):
    a = run(capsys, "estimate", "--estimator", "msle-ind", "--k", "5", "--seed", "9")
    b = run(capsys, "estimate", "--estimator", "msle-ind", "--k", "5", "--seed", "9")
    a.pop("wall_time"), b.pop("wall_time")
    assert a == b


def test_ci(capsys):
    out = run(capsys, "ci", "--level", "0.9")
    lo, hi = out["interval"][0]
    assert lo < out["estimate"]["xi_hat"]["theta"][0] < hi


def test_diagnose_gap_gaussian(capsys, tmp_path):
    p = tmp_path / "x.txt"
    np.savetxt(p, np.linspace(-1, 2, 20))
    out = run(capsys, "diagnose", "--check", "gap", "--model", "gaussian_linear", "--data", str(p),
              "--theta", "0.5", "--phi", "0.5,0.25", "--k", "5", "--R", "100")
    assert out["report"]["gap_per_obs"] >= 0


def test_diagnose_lemmas_small(capsys):
    out = run(capsys, "diagnose", "--check", "lemmas", "--scale", "0.01")
    assert out["report"]["passed"]


def test_table1_csv(capsys, tmp_path):
    csv_path = tmp_path / "t.csv"
    out = run(capsys, "table1", "--replications", "3", "--R", "100", "--k-grid", "2,4", "--csv", str(csv_path))
    assert out["config"]["replications"] == 3
    assert csv_path.read_text().startswith("estimator,quantity,k=2,k=4")


def test_phase_cli(capsys, tmp_path):
    out = run(capsys, "phase", "--beta-grid", "0,1", "--n-grid", "10,20", "--estimator", "msle-ind", "--reps", "3",
              "--csv", str(tmp_path / "p.csv"))
    assert len(out["rows"]) == 4


def test_config_roundtrip(tmp_path):
    cfg = tmp_path / "c.yaml"
    (tmp_path / "d.txt").write_text("1.0\n2.0\n3.0\n")
    cfg.write_text(
        "master_seed: 5\nk_grid: [3, 6]\nreplications: 4\noptimizer:\n  x_tol: 1e-7\n"
        "data_file: d.txt\nfresh_data_per_replication: false\nphase:\n  reps: 3\n"
    )
    raw = load_config(cfg)
    assert raw["optimizer"]["x_tol"] == 1e-7
    grid = grid_from_config(raw)
    assert grid.k_grid == (3, 6) and grid.dataset == [1.0, 2.0, 3.0]


def test_config_rejects_unknown(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("replicatons: 4\n")
    with pytest.raises(ConfigError):
        load_config(cfg)
    cfg.write_text("optimizer:\n  tol: 1\n")
    with pytest.raises(ConfigError):
        load_config(cfg)


def test_error_exit_code(capsys, tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("1.0\n")
    assert main(["estimate", "--estimator", "iwvi", "--k", "3", "--inner", "analytic", "--data", str(p)]) == 2


@pytest.mark.parametrize("name", ["table1", "coverage", "boxplots", "phase"])
def test_shipped_configs_load(name):
    from pathlib import Path

    from iwvi_lab.config import grid_from_config, load_config

    path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.yaml"
    grid_from_config(load_config(path)).validate()
