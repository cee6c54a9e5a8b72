import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iwvi_lab.experiments import (
    ExperimentGrid,
    boxplot_data,
    coverage_experiment,
    phase_k,
    phase_report_json,
    phase_sweep,
    run_grid,
    summarise,
    tukey_summary,
)
from iwvi_lab.models import EULER_GAMMA


def small(**kw):
    base = dict(k_grid=(5, 20), replications=6, R=200, estimators=("msle-ind", "msle-over", "iwvi"), master_seed=3)
    base.update(kw)
    return ExperimentGrid(**base)


def test_grid_validation():
    for bad in ({"replications": 0}, {"k_grid": ()}, {"k_grid": (10, 5)}, {"estimators": ("bogus",)}, {"level": 1.5}):
        with pytest.raises(ValueError):
            small(**bad)


def test_single_replication_mle():
    rep = run_grid(small(replications=1, estimators=("mle",)))
    cell = rep.cell("mle")
    assert cell.variance_part == 0.0
    assert cell.mse == pytest.approx((cell.estimates[0][0] - 1.0) ** 2, abs=1e-15)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(-2, 2))
def test_mse_decomposition(values, theta_star):
    cell = summarise("x", 1, [np.array([v]) for v in values], [], theta_star)
    assert cell.mse == pytest.approx(cell.bias_sq + cell.variance_part, abs=1e-12)
    assert cell.bias_sq == pytest.approx((np.mean(values) - theta_star) ** 2, abs=1e-9)


def test_reports_bit_identical():
    g = small(level=0.95)
    assert run_grid(g).to_json() == run_grid(g).to_json()


def test_report_contents(tmp_path):
    rep = run_grid(small(level=0.9))
    d = json.loads(rep.to_json())
    assert d["master_seed"] == 3 and d["build"].startswith("iwvi-lab")
    assert d["config"]["k_grid"] == [5, 20]
    for c in d["cells"]:
        assert 0 <= c["coverage"] <= 1 and c["valid"]
    path = tmp_path / "t.csv"
    rep.write_table1_csv(path)
    rows = list(csv.reader(open(path, newline="")))
    assert rows[0] == ["estimator", "quantity", "k=5", "k=20"]
    assert [r[:2] for r in rows[1:3]] == [["msle-ind", "mse"], ["msle-ind", "variance"]]
    assert open(path, "rb").read().count(b"\r\n") == 7


def test_failures_recorded_not_raised():
    # a tiny optimiser budget makes every estimate fail
    rep = run_grid(small(optimizer={"max_iter": 2}, estimators=("msle-ind",)))
    cell = rep.cell("msle-ind", 5)
    assert not cell.valid and len(cell.errors) == 6 and all(e is None for e in cell.estimates)


def test_boxplots_fixed_data():
    g = small(fresh_data_per_replication=False, k_grid=(1, 8), k1_analytic=True, replications=20)
    rep = boxplot_data(g)
    iw = rep.cell("iwvi", 1)
    values = {e[0] for e in iw.estimates}
    assert len(values) == 1
    summaries = {(s["estimator"], s["k"]): s for s in rep.extra["summaries"]}
    assert summaries[("iwvi", 1)]["q1"] == summaries[("iwvi", 1)]["q3"]


def test_k1_means_centred_on_mean_minus_gamma():
    g = small(fresh_data_per_replication=False, k_grid=(1,), k1_analytic=True, replications=300, n=100,
              estimators=("msle-ind", "msle-over", "iwvi"))
    rep = run_grid(g)
    target = rep.cell("iwvi", 1).estimates[0][0]
    for name in ("msle-ind", "msle-over"):
        vals = np.array([e[0] for e in rep.cell(name, 1).estimates])
        assert abs(vals.mean() - target) < 3 * vals.std(ddof=1) / np.sqrt(vals.size)


def test_fixed_dataset_used():
    x = list(np.full(10, 1.0 + EULER_GAMMA))
    rep = run_grid(small(fresh_data_per_replication=False, dataset=x, k_grid=(1,), k1_analytic=True,
                         estimators=("iwvi",), replications=2))
    assert rep.cell("iwvi", 1).estimates[0][0] == pytest.approx(1.0, abs=1e-6)


def test_boxplot_and_coverage_design_guards():
    with pytest.raises(ValueError):
        boxplot_data(small())
    with pytest.raises(ValueError):
        coverage_experiment(small(fresh_data_per_replication=False))


def test_coverage_fraction():
    rep = coverage_experiment(small(estimators=("mle",), replications=10), 0.95)
    (row,) = rep.extra["coverage"]
    assert 0 <= row["coverage"] <= 1 and row["evaluated"] == 10


def test_tukey_summary():
    s = tukey_summary([1, 2, 3, 4, 100])
    assert s["median"] == 3 and s["outliers"] == 1 and s["whisker_high"] == 4


def test_phase_k():
    assert phase_k(100, 0.0) == 1
    assert phase_k(100, 0.0, k_floor=10) == 10
    assert phase_k(100, 1.5) == 1000
    assert phase_k(50, 1.5) == 354


def test_phase_sweep_deterministic():
    a = phase_sweep("gumbel", 1.0, [0.0, 1.0], [10, 20], "msle-ind", 5, 7, k_floor=2)
    b = phase_sweep("gumbel", 1.0, [0.0, 1.0], [10, 20], "msle-ind", 5, 7, k_floor=2)
    assert phase_report_json(a) == phase_report_json(b)
    assert [r["k"] for r in a["rows"]] == [2, 2, 10, 20]
    with pytest.raises(ValueError):
        phase_sweep("gumbel", 1.0, [3.0], [10], "mle", 2, 1)
