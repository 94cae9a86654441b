import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trajid.actuators import PdModel
from trajid.dynamics import PlantParams
from trajid.estimators import Family, TorqueOracle, TrajIDParam
from trajid.evaluation import (ComparisonReport, EvalConfig, EvalResult, eval_mae,
                               run_horizon_ablation, run_stability_study, run_w_sweep)

TRUTH = PdModel(3.684, 0.552, 0.00321)


def shifted(traj, offset):
    """Same data, reference channel moved by ``offset``; the initial state is unchanged."""
    return dataclasses.replace(traj, q_true=traj.q_true + offset)


# -- MAE -------------------------------------------------------------------------------

def test_hidden_model_scores_zero_on_noiseless_data(short_noiseless):
    assert eval_mae(TRUTH, short_noiseless).mae == pytest.approx(0.0, abs=1e-12)


def test_constant_one_milliradian_offset_scores_one_milliradian(short_noiseless):
    assert eval_mae(TRUTH, shifted(short_noiseless, 1e-3)).mae == pytest.approx(1e-3, rel=1e-9)


@given(st.floats(-0.1, 0.1))
def test_mae_of_a_constant_offset_is_its_magnitude(short_noiseless, offset):
    assert eval_mae(TRUTH, shifted(short_noiseless, offset)).mae == \
        pytest.approx(abs(offset), rel=1e-9, abs=1e-12)


def test_horizon_and_windows(short_noiseless):
    res = eval_mae(TRUTH, shifted(short_noiseless, 2e-3), cfg=EvalConfig(horizon=120, window=50))
    assert len(res.q_sim) == 120
    assert len(res.window_mae) == 3
    np.testing.assert_allclose(res.window_mae, 2e-3, rtol=1e-9)


def test_noisy_channel_is_used_when_requested(short_noisy):
    truth = eval_mae(TRUTH, short_noisy, cfg=EvalConfig(use_truth=True)).mae
    logged = eval_mae(TRUTH, short_noisy, cfg=EvalConfig(use_truth=False)).mae
    assert truth != logged


def test_divergent_rollout_scores_infinity(short_noiseless):
    bad = PdModel(-1e9, 0.0, 0.0)
    with np.errstate(all="ignore"):
        res = eval_mae(bad, short_noiseless)
    assert math.isinf(res.mae) and res.divergence_step is not None


def test_torque_sequence_is_scored_over_its_own_length(short_noiseless):
    piece = short_noiseless.slice(0, 31)
    oracle = TorqueOracle(horizon=3, max_epochs=50).fit(piece)
    res = eval_mae(oracle.model_, short_noiseless)
    assert len(res.q_sim) == oracle.model_.max_steps


# -- comparison table ------------------------------------------------------------------

@given(st.lists(st.tuples(st.text("abcdef", min_size=1, max_size=5),
                          st.floats(0, 10, allow_nan=False)), min_size=1, max_size=8,
                unique_by=lambda r: r[0]))
def test_comparison_rows_are_sorted_by_mae(entries):
    rep = ComparisonReport()
    for name, mae in entries:
        rep.add(name, EvalResult(mae, np.array([mae, mae])))
    maes = [r["mae"] for r in rep.rows]
    assert maes == sorted(maes)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "rank,model,mae,mae_std"
    assert [ln.split(",")[1] for ln in lines[1:]] == rep.ranking
    assert len(rep.to_long_csv().splitlines()) == 1 + 2 * len(entries)


# -- studies ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def split(short_noisy):
    return short_noisy.slice(0, 600), short_noisy.slice(600, 1000)


def quick_param(**kw):
    return Family(TrajIDParam(max_epochs=60, patience=1000, minibatch_size=200, **kw))


def test_w_sweep_has_one_row_per_alpha(split):
    rows = run_w_sweep(quick_param(), *split, alphas=(0.0, 0.5, 1.0))
    assert [r["alpha"] for r in rows] == [0.0, 0.5, 1.0]
    assert all(np.isfinite(r["mae"]) and r["mae"] >= 0 for r in rows)
    with pytest.raises(ValueError):
        run_w_sweep(quick_param(), *split, alphas=(1.5,))


def test_horizon_ablation_has_one_row_per_horizon(split):
    rows = run_horizon_ablation(quick_param(), *split, horizons=(1, 2, 4))
    assert [r["horizon"] for r in rows] == [1, 2, 4]
    assert all(np.isfinite(r["mae"]) for r in rows)


def test_half_weighting_is_reproducible(split):
    a = run_w_sweep(quick_param(), *split, alphas=(0.5,))
    b = run_w_sweep(quick_param(), *split, alphas=(0.5,))
    assert a[0]["mae"] == b[0]["mae"] and a[0]["best_loss"] == b[0]["best_loss"]


def test_parallel_workers_match_serial(split):
    serial = run_w_sweep(quick_param(), *split, alphas=(0.0, 1.0), workers=1)
    parallel = run_w_sweep(quick_param(), *split, alphas=(0.0, 1.0), workers=2)
    assert [r["mae"] for r in serial] == [r["mae"] for r in parallel]


def test_stability_study_shapes_and_spread(split):
    res = run_stability_study(quick_param(), split[0], n_runs=3, epochs=40)
    assert res.params.shape == (3, 3) and res.best_losses.shape == (3,)
    assert res.names == ("kp", "kv", "armature")
    assert len(res.table()) == 3 and set(res.table()[0]) == {"run", "best_loss", "kp", "kv",
                                                              "armature"}
    q = res.trace_quantiles()
    assert q.shape[0] == 5 and np.all(np.diff(q, axis=0)[np.isfinite(np.diff(q, axis=0))] >= 0)
    # Different seeds really do start from different points.
    assert len({tuple(r.params[0]) for r in res.traces}) == 3
    with pytest.raises(ValueError):
        run_stability_study(quick_param(), split[0], n_runs=1)
