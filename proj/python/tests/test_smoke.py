import json
import os
from pathlib import Path

import numpy as np
import pytest

import cbx

DATA = Path(os.environ.get("CBX_DATA_DIR", Path(__file__).resolve().parents[2] / "data"))


def test_floor_worked_example():
    e = cbx.apply_probability_floor([0.7, 0.2, 0.05, 0.05], 0.1)
    assert np.allclose(e, [0.614286, 0.185714, 0.1, 0.1], atol=1e-6)
    assert abs(sum(e) - 1.0) < 1e-12


def test_floor_schedule():
    assert cbx.floor_schedule(1, 0.5, 4) == pytest.approx(0.25)
    assert cbx.floor_schedule(16, 0.5, 4) == pytest.approx(1 / 16)


def test_solve_tree_split():
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    s = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
    assert cbx.solve_tree(s, x, 0)[0] == 3.0
    objective, depth = cbx.solve_tree(s, x, 1)
    assert objective == 4.0 and depth == 1


def test_corpus_and_uniform_first_batch():
    log = cbx.generate_corpus(300, seed=3)
    assert len(log) == 300
    assert len(log.arms) == 8
    ctx = log.contexts()[:5]
    first = cbx.propose_propensities(log.prefix(0), ctx, json.dumps({"algorithm": "TreeBagging"}), 0)
    assert np.allclose(first, 1 / 8)
    later = cbx.propose_propensities(log, ctx, json.dumps({"ensemble_size": 5, "ensemble_depth": 1}), 2)
    assert np.allclose(later.sum(axis=1), 1.0)
    assert later.min() >= cbx.floor_schedule(301, 1 / 16, 8) - 1e-12


def test_learn_and_evaluate_bundled_log():
    learning = cbx.read_log(str(DATA / "learning_log.csv"))
    assert len(learning) == 1500
    report = cbx.learn_policy(learning)
    assert len(report["selected_arms"]) == 4
    assert report["depth"] <= 2
    full = cbx.read_log(str(DATA / "experiment_log.csv"))
    assert full.learning_rows == 1500
    out = cbx.evaluate(full, report)
    assert 0.0 <= out["difference"]["p_value"] <= 1.0
    assert out["difference"]["n"] == 1500


def test_validation_error_is_value_error():
    with pytest.raises(ValueError):
        cbx.apply_probability_floor([0.5, 0.5], 0.9)


def test_small_study():
    cfg = {
        "experiment": {"total_periods": 400, "batch_size": 100, "bandit": {"ensemble_size": 3, "ensemble_depth": 1}},
        "algorithms": ["Uniform", "TreeBagging"],
    }
    text = cbx.run_study(cfg, replicates=2, corpus_rows=400)
    lines = text.strip().splitlines()
    assert len(lines) == 3
    assert "Uniform" in text and "TreeBagging" in text
