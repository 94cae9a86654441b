import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajid.actuators import (Mlp, MlpModel, Normalizer, PdModel, ServoModel,
                              TorqueSequenceModel)
from trajid.dynamics import JointState, PlantParams, StepConfig, step
from trajid.excitation import ExcitationSpec, HiddenModelSpec, generate_dataset, stand_sweep
from trajid.identification import (CMAES, EsConfig, FitDivergence, LossWeights,
                                   OptimizerConfig, SegmentationConfig, Segments, batch_loss,
                                   bench_mse, curvature_coordinates, fit_bench_supervised,
                                   fit_es, fit_gradient, fit_oracle, gradient_check,
                                   loss_and_grad, loss_at, make_segments, oracle_length,
                                   oracle_segments)
from trajid.trajectory import Trajectory

from .conftest import NOISELESS_PD

TRUTH = np.array([3.684, 0.552, 0.00321])
PLANT = PlantParams()


def tiny_trajectory(n=10):
    t = np.arange(n) * 0.002
    return Trajectory(t, np.sin(t), np.cos(t), -np.sin(t))


# -- segmentation ------------------------------------------------------------------

def test_segment_count_and_initial_states():
    traj = tiny_trajectory(10)
    segs = make_segments(traj, 3)
    assert len(segs) == 7 and segs.horizon == 3
    np.testing.assert_array_equal(segs.q0, traj.q[segs.start])
    np.testing.assert_array_equal(segs.qdot0, traj.qdot[segs.start])
    np.testing.assert_array_equal(segs.q[:, 0], traj.q[1:4])


def test_horizon_one_segments_are_single_transitions():
    segs = make_segments(tiny_trajectory(10), 1)
    assert len(segs) == 9 and segs.commands.shape == (1, 9)
    with pytest.raises(ValueError):
        make_segments(tiny_trajectory(3), 3)


@given(n=st.integers(5, 60), N=st.integers(1, 4))
def test_oracle_windows_tile_without_overlap(n, N):
    traj = tiny_trajectory(n)
    segs = oracle_segments(traj, N)
    assert len(segs) * N == oracle_length(traj, N) == ((n - 1) // N) * N
    np.testing.assert_array_equal(segs.start, np.arange(len(segs)) * N)


# -- loss ------------------------------------------------------------------------------

def test_loss_is_zero_at_the_generating_parameters(short_noiseless):
    segs = make_segments(short_noiseless, 3)
    assert loss_at(PdModel(*TRUTH), TRUTH, segs, LossWeights(0.5, 0.5), PLANT) < 1e-28


def test_zero_gradient_at_exact_fit(short_noiseless):
    segs = make_segments(short_noiseless, 3)
    _, g = loss_and_grad(PdModel(*TRUTH), TRUTH, segs, LossWeights(0.5, 0.5), PLANT)
    assert np.max(np.abs(g)) < 1e-12


def test_single_step_loss_is_the_squared_mismatch():
    s0 = JointState(0.1, -0.2)
    model = PdModel(2.0, 0.3, 0.001)
    predicted = step(s0, model.torque(0.5, s0.q, s0.qdot), model.plant_for(PLANT), StepConfig())
    measured_q = 0.12
    segs = Segments(np.array([0]), np.array([s0.q]), np.array([s0.qdot]), np.array([[0.5]]),
                    np.array([[measured_q]]), np.array([[0.0]]))
    loss = loss_at(model, model.get_vector(), segs, LossWeights(1.0, 0.0), PLANT)
    assert loss == pytest.approx((predicted.q - measured_q) ** 2, rel=1e-12)


def test_loss_is_quadratic_in_the_weights(short_noisy):
    segs = make_segments(short_noisy, 3)
    z = np.array([3.0, 0.5, 0.002])
    base = loss_at(PdModel(*z), z, segs, LossWeights(1.0, 0.0), PLANT)
    doubled = loss_at(PdModel(*z), z, segs, LossWeights(2.0, 0.0), PLANT)
    assert doubled == pytest.approx(4.0 * base, rel=1e-12)


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(0.0, 0.0)
    assert LossWeights.from_alpha(0.25) == LossWeights(0.25, 0.75)


# -- gradient checks --------------------------------------------------------------

@settings(max_examples=15)
@given(seed=st.integers(0, 10_000), alpha=st.floats(0.0, 1.0),
       damping=st.floats(0.0, 0.05), friction=st.floats(0.0, 0.05))
def test_param_gradient_matches_finite_differences(seed, alpha, damping, friction):
    rng = np.random.default_rng(seed)
    traj = generate_dataset(ExcitationSpec(duration=0.4, seed=seed))
    segs = make_segments(traj, int(rng.integers(1, 5)))
    model = PdModel(*rng.uniform([1.0, 0.1, 0.0005], [8.0, 2.0, 0.01]))
    plant = PlantParams(damping=damping, frictionloss=friction)
    weights = LossWeights(alpha, 1.0 - alpha) if 0 < alpha < 1 else LossWeights.from_alpha(0.5)
    check = gradient_check(model, model.get_vector(), segs, weights, plant)
    assert check.kink.sum() <= 1
    assert check.max_error < 1e-5


@settings(max_examples=5)
@given(seed=st.integers(0, 10_000))
def test_network_and_oracle_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    traj = generate_dataset(ExcitationSpec(duration=0.4, seed=seed))
    segs = make_segments(traj, 3)
    X = np.column_stack([traj.q_des, traj.q, traj.qdot])
    net = MlpModel(Mlp.init((3, 32, 32, 1), seed=seed, normalizer=Normalizer.fit(X)))
    check = gradient_check(net, net.get_vector(), segs, LossWeights.from_alpha(0.7), PLANT,
                           index=rng.choice(net.n_params, 20, replace=False))
    assert check.max_error < 1e-5
    oracle = TorqueSequenceModel(rng.normal(0, 0.3, oracle_length(traj, 3)), 3)
    check = gradient_check(oracle, oracle.get_vector(), oracle_segments(traj, 3),
                           LossWeights.from_alpha(0.7), PLANT)
    assert check.max_error < 1e-5


def test_curvature_coordinates_round_trip(short_noisy):
    segs = make_segments(short_noisy, 3)
    coords = curvature_coordinates(PdModel(3.0, 0.5, 0.002), segs, LossWeights(), PLANT)
    z = np.array([3.3, 0.45, 0.004])
    np.testing.assert_allclose(coords.to_z(coords.to_u(z)), z, rtol=1e-12)


# -- fit_gradient -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def noiseless_10s():
    return generate_dataset(ExcitationSpec(duration=10.0, seed=21), NOISELESS_PD)


def test_w_irrelevance_on_noiseless_data(noiseless_10s):
    fits = []
    for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
        rep = fit_gradient(PdModel(5.0, 1.0, 0.0), noiseless_10s,
                           weights=LossWeights.from_alpha(alpha))
        fits.append(rep.model.get_vector())
    fits = np.array(fits)
    assert np.max(np.abs(fits / fits.mean(axis=0) - 1)) < 0.005
    assert np.max(np.abs(fits[-1] / TRUTH - 1)) < 1e-3


def test_infinite_min_delta_stops_after_patience(short_noisy):
    rep = fit_gradient(PdModel(5.0, 1.0, 0.0), short_noisy,
                       opt=OptimizerConfig(patience=17, min_delta=math.inf))
    assert len(rep.epochs) == 17 and rep.termination == "early_stopping"
    assert rep.best_epoch == 0


def test_best_retention_and_determinism(short_noisy):
    opt = OptimizerConfig(max_epochs=150, seed=3)
    seg = SegmentationConfig(minibatch_size=64)
    a = fit_gradient(PdModel(5.0, 1.0, 0.0), short_noisy, seg, opt=opt)
    b = fit_gradient(PdModel(5.0, 1.0, 0.0), short_noisy, seg, opt=opt)
    assert a.losses == b.losses and a.best_loss == b.best_loss
    np.testing.assert_array_equal(a.model.get_vector(), b.model.get_vector())
    assert a.best_loss <= min(a.losses)
    running = np.minimum.accumulate(a.losses)
    assert np.all(np.diff(running) <= 0)
    assert loss_at(a.model, a.model.get_vector(), make_segments(short_noisy, 3),
                   LossWeights(), PLANT) == a.best_loss


def test_parameters_stay_within_bounds(short_noisy):
    rep = fit_gradient(PdModel(0.5, 0.05, 0.0), short_noisy, opt=OptimizerConfig(max_epochs=50))
    assert np.all(np.array(rep.params) >= 0)


def test_divergence_is_reported(short_noisy):
    net = MlpModel(Mlp.init((3, 4, 1), seed=0, normalizer=Normalizer.identity(3)))
    with pytest.raises(FitDivergence) as info, np.errstate(all="ignore"):
        fit_gradient(net.with_vector(np.full(net.n_params, 1e200)), short_noisy,
                     opt=OptimizerConfig(max_epochs=5))
    assert info.value.report is not None


# -- oracle --------------------------------------------------------------------------------

def test_oracle_matches_a_noiseless_segment_exactly(short_noiseless):
    piece = short_noiseless.slice(0, 31)
    rep = fit_oracle(piece, 3, opt=OptimizerConfig(max_epochs=3000))
    assert rep.best_loss < 1e-12
    assert rep.model.n_params == 30


def test_oracle_reproduces_the_hidden_torque_profile(short_noiseless):
    piece = short_noiseless.slice(0, 61)
    # The torque sequence reproduces the PD torque only on the same effective plant.
    rep = fit_oracle(piece, 3, weights=LossWeights.from_alpha(0.5),
                     plant=PLANT.with_overrides(armature=TRUTH[2]))
    truth = PdModel(*TRUTH).torque(piece.q_des[:60], piece.q_true[:60], piece.qdot_true[:60])
    np.testing.assert_allclose(rep.model.tau, truth, atol=1e-4)
    with pytest.raises(ValueError):
        fit_oracle(piece, 3, init=np.zeros(5))


# -- evolution strategy ----------------------------------------------------------------

def test_es_with_zero_step_never_moves(short_noisy):
    rep = fit_es(PdModel(3.0, 0.5, 0.002), short_noisy,
                 es=EsConfig(population=1, sigma0=0.0, max_evaluations=30))
    for p in rep.params:
        np.testing.assert_array_equal(p, [3.0, 0.5, 0.002])


def test_cmaes_minimizes_a_quadratic():
    es = CMAES(np.full(4, 3.0), 1.0, seed=0)
    for _ in range(200):
        X = es.ask()
        es.tell(X, np.sum(X**2, axis=1))
    assert np.linalg.norm(es.mean) < 1e-4


# -- supervised stand fit -----------------------------------------------------------------

def test_bench_fits_a_linear_steady_map():
    data = stand_sweep(HiddenModelSpec(), torque_noise=0.0)
    model = fit_bench_supervised(data, opt=OptimizerConfig(max_epochs=1500))
    assert bench_mse(model, data) < 1e-4


def test_bench_error_is_elevated_in_the_uncollected_region():
    hidden = HiddenModelSpec()
    servo = hidden.build()
    data = stand_sweep(hidden, torque_noise=0.0)
    model = fit_bench_supervised(data, opt=OptimizerConfig(max_epochs=1500))
    u = np.linspace(0.85, 1.0, 20)                    # high load, low speed: beyond 75% stall
    probes = np.column_stack([u, np.zeros_like(u), servo.steady_torque(u, 0.0)])
    assert np.all(np.abs(probes[:, 2]) > 0.75 * servo.stall)
    # The network only extrapolates there; its error is clearly above the in-sample error.
    assert bench_mse(model, probes) > 2 * bench_mse(model, data)


def test_bench_standardizer_equivalence():
    data = stand_sweep(HiddenModelSpec(), torque_noise=0.0)
    opt = OptimizerConfig(max_epochs=1500)
    raw = fit_bench_supervised(data, opt=opt)
    mean, scale = data[:, :2].mean(axis=0), data[:, :2].std(axis=0)
    pre = data.copy()
    pre[:, :2] = (data[:, :2] - mean) / scale
    std = fit_bench_supervised(pre, opt=opt, standardize=False)
    a = raw.net(data[:, 0], data[:, 1])
    b = std.net(pre[:, 0], pre[:, 1])
    assert np.sqrt(np.mean((a - b) ** 2)) < 0.02


def test_bench_rejects_malformed_stand_data():
    with pytest.raises(ValueError):
        fit_bench_supervised(np.zeros((5, 2)))


def test_servo_is_not_exactly_pd():
    assert isinstance(HiddenModelSpec().build(), ServoModel)
