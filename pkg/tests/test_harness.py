import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from replica_ising.harness import (
    COMPARISON_COLUMNS,
    SCALING_COLUMNS,
    TAG_EXPERIMENT,
    TAG_THEORY,
    ExperimentPlan,
    _one_trial,
    cell_seed,
    run_comparison,
    run_scaling,
    simulate_cell,
    summarize,
)


def tiny_plan(**kw):
    base = dict(family="rr", N=30, d=3, K0=0.4, lambdas=[0.3], alphas=[2.0], trials=3, T_MC=20,
                seed=5, burn_in=50, thin=2)
    base.update(kw)
    return ExperimentPlan(**base)


# ---------------------------------------------------------------- plan validation

@pytest.mark.parametrize("bad", [
    {"family": "tree"},
    {"lambdas": []},
    {"lambdas": [0.0]},
    {"losses": ["hinge"]},
    {"trials": 0},
    {"alphas": []},
    {"alphas": [0.001]},  # M rounds to 0
    {"family": "grid2d", "L": None},
    {"cs": [10.0], "Ns": []},
    {"density": "exact"},
])
def test_plan_rejects_invalid(bad):
    with pytest.raises(ValueError):
        tiny_plan(**bad)


def test_plan_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown plan keys"):
        ExperimentPlan.from_dict({"N": 10, "alpah": [1.0]})


def test_plan_json_roundtrip(tmp_path):
    p = tiny_plan(cs=[15, 25], Ns=[100, 200])
    path = tmp_path / "plan.json"
    path.write_text(json.dumps(p.to_dict()))
    assert ExperimentPlan.from_json(path) == p


def test_grid_plan_sets_size_and_degree():
    p = ExperimentPlan(family="grid2d", L=5, K0=0.2)
    assert (p.N, p.d) == (25, 4)


def test_cells():
    p = tiny_plan(alphas=[0.5, 1.0], cs=[10.0], Ns=[100, 1000])
    assert p.alpha_cells() == [(0.5, 15), (1.0, 30)]
    assert p.scaling_cells() == [(10.0, 100, round(10 * math.log(100))), (10.0, 1000, round(10 * math.log(1000)))]


# ---------------------------------------------------------------- seeds

def test_cell_seed_pure_and_partitioned():
    assert cell_seed(7, TAG_EXPERIMENT, 0) == cell_seed(7, TAG_EXPERIMENT, 0)
    seeds = {cell_seed(7, tag, *key) for tag in (TAG_EXPERIMENT, TAG_THEORY)
             for key in [(0,), (1,), (0, 0), (1, 0), (0, 1)]}
    assert len(seeds) == 10
    assert cell_seed(7, TAG_EXPERIMENT, 0) != cell_seed(8, TAG_EXPERIMENT, 0)


def test_single_trial_reproducible_from_recorded_seed():
    p = tiny_plan()
    seed = cell_seed(p.seed, TAG_EXPERIMENT, 0)
    a = _one_trial((p, p.N, 60, seed, 1))
    b = _one_trial((p, p.N, 60, seed, 1))
    c = _one_trial((p, p.N, 60, seed, 2))
    key = (0.3, "quadratic")
    assert a[key].rss == b[key].rss and a[key].recall == b[key].recall
    assert a.keys() == c.keys()


def test_simulate_cell_shape():
    p = tiny_plan()
    res = simulate_cell(p, p.N, 60, 123)
    assert set(res) == {(0.3, "quadratic"), (0.3, "logistic")}
    for m in res.values():
        assert m.n_trials == 3
        assert 0.0 <= m.recall <= 1.0
        assert m.extra["all_converged"]


# ---------------------------------------------------------------- end to end

@pytest.fixture(scope="module")
def comparison(tmp_path_factory):
    out = tmp_path_factory.mktemp("cmp")
    p = tiny_plan(trials=2)
    return out, run_comparison(p, out_dir=out)


def test_comparison_files(comparison):
    out, res = comparison
    with open(out / "comparison.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0].keys()) == COMPARISON_COLUMNS
    assert len(rows) == 4  # 1 alpha x 1 lambda x 2 losses x {theory, experiment}
    assert {r["source"] for r in rows} == {"theory", "experiment"}
    assert all(r["error"] == "" for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["plan"]["seed"] == 5
    assert "max |theory - experiment|" in (out / "summary.txt").read_text()


def test_comparison_deterministic(comparison):
    _, res = comparison
    again = run_comparison(tiny_plan(trials=2))
    key = lambda r: (r["source"], r["loss"])  # noqa: E731
    for a, b in zip(sorted(res["rows"], key=key), sorted(again["rows"], key=key)):
        for k in ("precision", "recall", "rss"):
            assert a[k] == b[k] or (math.isnan(a[k]) and math.isnan(b[k]))


def test_theory_seed_shared_between_losses(comparison):
    _, res = comparison
    th = [r for r in res["rows"] if r["source"] == "theory"]
    assert len({r["cell_seed"] for r in th}) == 1


def test_summarize_flags():
    rows = [
        {"alpha": 1, "lambda": 0.3, "loss": "quadratic", "source": "theory", "precision": 0.9, "precision_se": 0.0,
         "recall": 0.8, "recall_se": 0.0, "rss": 0.10, "rss_se": 0.0},
        {"alpha": 1, "lambda": 0.3, "loss": "quadratic", "source": "experiment", "precision": 0.85,
         "precision_se": 0.01, "recall": 0.79, "recall_se": 0.01, "rss": 0.11, "rss_se": 0.01},
    ]
    s = summarize(rows)
    cell = s["cells"][0]
    assert cell["precision_gap"] == pytest.approx(0.05)
    assert not cell["precision_ok"]  # 0.05 > max(0.03, 3 * 0.01)
    assert cell["recall_ok"]
    assert cell["rss_rel_gap"] == pytest.approx(0.01 / 0.11)


def test_scaling_csv(tmp_path):
    p = tiny_plan(alphas=None, cs=[5.0, 30.0], Ns=[30, 40], losses=["quadratic"], trials=2)
    rows = run_scaling(p, out_dir=tmp_path)
    with open(tmp_path / "scaling.csv") as fh:
        header = next(csv.reader(fh))
    assert header == SCALING_COLUMNS
    assert header[:7] == ["c", "N", "precision", "precision_se", "recall", "recall_se", "side"]
    assert [r["side"] for r in rows] == ["below", "below", "above", "above"]
    assert all(np.isfinite(r["c0"]) for r in rows)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.integers(0, 10_000), min_size=1, max_size=3))
def test_cell_seed_property(master, key):
    s = cell_seed(master, TAG_EXPERIMENT, *key)
    assert s == cell_seed(master, TAG_EXPERIMENT, *key)
    assert 0 <= s < 2**63
    assert s != cell_seed(master, TAG_THEORY, *key)
    assert s != cell_seed(master, TAG_EXPERIMENT, *key, 0)
