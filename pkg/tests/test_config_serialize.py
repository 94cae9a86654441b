import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trajid.actuators import (BenchSupModel, Mlp, MlpModel, Normalizer, PdModel, PwmPdParams,
                              ResidualModel, ServoModel, TorqueSequenceModel)
from trajid.config import ConfigError, ExperimentConfig, load_config, parse_config, to_ini
from trajid.identification import FitReport
from trajid.serialize import (ModelFormatError, dumps_model, parse_model_text, parse_summary,
                              report_csv, report_summary, rows_csv)
from trajid.trajectory import Trajectory, TrajectoryFormatError


# -- configuration ---------------------------------------------------------------------

def test_defaults_round_trip():
    cfg = ExperimentConfig()
    assert parse_config(to_ini(cfg)) == cfg


def test_partial_file_overrides_only_what_it_names():
    cfg = parse_config("[run]\nseed = 7\n[weights]\nalpha = 0.5\n[model]\nhidden_sizes = 8, 8\n")
    assert cfg.seed == 7 and cfg.weights.alpha == 0.5 and cfg.model.hidden_sizes == (8, 8)
    assert cfg.optimizer == ExperimentConfig().optimizer


@given(seed=st.integers(0, 2**31 - 1), alpha=st.floats(0, 1), epochs=st.integers(1, 10**5),
       lr=st.floats(1e-6, 1.0), horizon=st.integers(1, 20))
def test_round_trip_is_exact(seed, alpha, epochs, lr, horizon):
    cfg = ExperimentConfig().replace(seed=seed, weights={"alpha": alpha},
                                     optimizer={"max_epochs": epochs, "learning_rate": lr},
                                     segmentation={"segment_length": horizon})
    assert parse_config(to_ini(cfg)) == cfg


@pytest.mark.parametrize("text", [
    "[optimizer]\nmax_epoch = 5\n",          # typo'd key
    "[optimiser]\nmax_epochs = 5\n",         # typo'd section
    "[run]\nseeds = 1\n",
    "[optimizer]\nmax_epochs = many\n",      # unparsable
    "[weights]\nalpha = 1.5\n",              # out of range
    "[model]\nkind = transformer\n",
    "[model]\ninit = zeros\n",
    "[ablation]\nruns = 1\n",
    "[ablation]\nhorizons = 0, 1\n",
    "[stand]\nn_duties = 1\n",
    "[data]\ndt = -1\n",
    "[data]\ntrain_duration = 10.001\n",     # not a whole number of steps
    "[plant]\nrod_mass = -1\n",
    "not an ini file",
])
def test_bad_configs_are_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_per_section_seeds_are_not_configurable():
    # The global seed owns every random stream.
    with pytest.raises(ConfigError):
        parse_config("[optimizer]\nseed = 3\n")
    assert "[optimizer]" in to_ini(ExperimentConfig())
    assert "\nseed" not in to_ini(ExperimentConfig()).split("[optimizer]")[1].split("[")[0]


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


# -- trajectory files -------------------------------------------------------------------

def test_trajectory_csv_round_trip_is_bit_exact(short_noisy):
    back = Trajectory.from_csv(short_noisy.to_csv())
    for name in ("t", "q_des", "q", "qdot", "q_true", "qdot_true"):
        np.testing.assert_array_equal(getattr(back, name), getattr(short_noisy, name))


def test_trajectory_without_truth(tmp_path):
    t = np.arange(5) * 0.002
    traj = Trajectory(t, t, t, t)
    path = tmp_path / "x.csv"
    traj.to_csv(path)
    back = Trajectory.from_csv(path)
    assert not back.has_truth and back.to_csv() == traj.to_csv()


@pytest.mark.parametrize("text", [
    "t,q,q_des,qdot\n0,0,0,0\n0.002,0,0,0\n",            # wrong column order
    "t,q_des,q,qdot\n0,0,0,0\n0.002,0,0\n",              # short row
    "t,q_des,q,qdot\n0,0,0,0\n0.002,x,0,0\n",            # non-numeric
    "t,q_des,q,qdot\n0,0,0,0\n0.002,0,0,0\n0.005,0,0,0\n",  # uneven spacing
])
def test_malformed_trajectory_files(text):
    with pytest.raises(TrajectoryFormatError):
        Trajectory.from_csv(text)


# -- model text ------------------------------------------------------------------------

def _models():
    norm = Normalizer(np.array([0.1, -0.2, 0.3]), np.array([1.5, 2.0, 0.5]))
    net = Mlp.init((3, 5, 1), seed=3, normalizer=norm)
    bench_net = Mlp.init((3, 4, 1), seed=4, normalizer=norm)
    with pytest.warns(UserWarning):
        pd_all = PdModel(1.0, 0.1, 0.0, damping=0.01, frictionloss=0.02,
                         free=("kp", "kv", "armature", "damping", "frictionloss"))
    return [
        PdModel(3.684, 0.552, 0.00321),
        pd_all,
        MlpModel(net),
        ResidualModel(net, 3.0, 0.5),
        TorqueSequenceModel(np.linspace(-1, 1, 9), 3),
        BenchSupModel(PwmPdParams(1.228, 0.092), bench_net),
        ServoModel(lag=0.01),
    ]


@pytest.mark.parametrize("model", _models(), ids=lambda m: m.kind)
def test_model_text_round_trip_is_bit_exact(model):
    back, meta = parse_model_text(dumps_model(model, {"seed": 3, "best_loss": 0.25}))
    assert type(back) is type(model) and back.kind == model.kind
    np.testing.assert_array_equal(back.get_vector(), model.get_vector())
    assert dumps_model(back) == dumps_model(model)
    assert meta == {"seed": "3", "best_loss": "0.25"}


def test_model_text_rejects_corruption():
    text = dumps_model(_models()[4])
    with pytest.raises(ModelFormatError):
        parse_model_text("hello\n" + text)
    with pytest.raises(ModelFormatError):
        parse_model_text(text.replace("length: 9", "length: 8"))
    with pytest.raises(ModelFormatError):
        parse_model_text(text.replace("kind: torque_sequence", "kind: magic"))
    with pytest.raises(ModelFormatError):
        parse_model_text("\n".join(ln for ln in text.splitlines() if not ln.startswith("tau")))


# -- fit reports and tables ----------------------------------------------------------------

def _report():
    rep = FitReport(PdModel(3.0, 0.5, 0.001), 0.125, 2)
    rep.epochs = [1, 2]
    rep.losses = [math.nan, 0.125]
    rep.batch_losses = [0.5, 0.25]
    rep.grad_norms = [1.0, 0.5]
    rep.params = [np.array([3.1, 0.6, 0.002]), np.array([3.0, 0.5, 0.001])]
    rep.evaluations = 2
    return rep


def test_report_csv_columns_and_values():
    lines = report_csv(_report(), names=("kp", "kv", "armature")).splitlines()
    assert lines[0] == "epoch,loss,batch_loss,grad_norm,kp,kv,armature"
    assert lines[1].split(",")[:2] == ["1", "nan"]
    assert float(lines[2].split(",")[4]) == 3.0
    assert report_csv(_report()).splitlines()[0].endswith("param_0,param_1,param_2")


def test_summary_round_trips_through_the_parser():
    summary = parse_summary(report_summary(_report(), ("kp", "kv", "armature"), {"note": "x"}))
    assert float(summary["best_loss"]) == 0.125 and float(summary["best.kp"]) == 3.0
    assert summary["note"] == "x" and summary["model_kind"] == "pd"


def test_rows_csv():
    text = rows_csv([{"a": 1, "b": 0.1}, {"a": 2, "b": math.inf}])
    assert text.splitlines() == ["a,b", "1,0.1", "2,inf"]
    assert rows_csv([]) == ""
