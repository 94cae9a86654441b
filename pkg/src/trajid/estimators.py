"""scikit-learn style front ends for the model zoo.

Each estimator wraps one fitter from ``identification``:

===================  ============================================  ==================
estimator            model / fitter                                ``fit`` input
===================  ============================================  ==================
``TrajIDParam``      PD gains + armature, ``fit_gradient``          trajectories
``TrajIDNN``         MLP torque model, ``fit_gradient``             trajectories
``TrajIDResidual``   command-correction MLP, ``fit_gradient``       trajectories
``ParamES``          PD gains + armature, ``fit_es``                trajectories
``NNES``             MLP torque model, ``fit_es``                   trajectories
``TorqueOracle``     free torque sequence, ``fit_oracle``           the test trajectory
``BenchSup``         PWM PD + stand torque map, supervised          ``(n, 3)`` stand data
===================  ============================================  ==================

``predict(traj)`` is the open-loop rollout from the trajectory's first
measured state and ``score(traj)`` is the negative MAE, so larger is better
as scikit-learn expects. Fitted attributes: ``model_`` and ``report_``
(``FitReport``; ``None`` for ``BenchSup``).
"""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np
from sklearn.base import BaseEstimator, clone

from .actuators import Mlp, MlpModel, Normalizer, PdModel, PwmPdParams, ResidualModel
from .dynamics import PlantParams, StepConfig
from .evaluation import EvalConfig, eval_mae, simulate_trajectory
from .identification import (EsConfig, FitReport, LossWeights, OptimizerConfig,
                             SegmentationConfig, fit_bench_supervised, fit_es, fit_gradient,
                             fit_oracle)
from .trajectory import Trajectory, derive_rng

# Starting point for ``init="default"``: the fixed regulator gains of the
# residual baseline and no armature.
DEFAULT_PARAM_INIT = (5.0, 1.0, 0.0)
# Box for ``init="random"``.
RANDOM_PARAM_LOW = (1.0, 0.1, 0.0)
RANDOM_PARAM_HIGH = (8.0, 2.0, 0.01)


def as_trajectories(X) -> list:
    trajs = [X] if isinstance(X, Trajectory) else list(X)
    if not trajs or not all(isinstance(t, Trajectory) for t in trajs):
        raise TypeError("expected a Trajectory or a non-empty list of Trajectory objects")
    return trajs


def step_config(traj: Trajectory) -> StepConfig:
    """Integration step implied by the t column (rounded off text round-trip noise)."""
    if len(traj) < 2:
        raise ValueError("a trajectory needs at least two samples")
    return StepConfig(float(f"{traj.dt:.12g}"))


def initial_param_model(init="random", seed=0) -> PdModel:
    if init == "default":
        return PdModel(*DEFAULT_PARAM_INIT)
    if init == "random":
        kp, kv, arm = derive_rng(seed, "param-init").uniform(RANDOM_PARAM_LOW, RANDOM_PARAM_HIGH)
        return PdModel(float(kp), float(kv), float(arm))
    if isinstance(init, PdModel):
        return init
    kp, kv, arm = (float(v) for v in init)
    return PdModel(kp, kv, arm)


def network_inputs(trajs) -> np.ndarray:
    return np.concatenate([np.column_stack([t.q_des, t.q, t.qdot]) for t in trajs])


def _split_options(options, *config_types):
    """Distribute an ``options`` dict over the given config dataclasses."""
    options = dict(options or {})
    parts = []
    for kind in config_types:
        names = {f.name for f in dataclasses.fields(kind)}
        parts.append({k: options.pop(k) for k in list(options) if k in names})
    if options:
        raise ValueError(f"unknown fit options: {', '.join(sorted(options))}")
    return parts


class _RolloutEstimator(BaseEstimator):
    """Shared predict/score for estimators that produce an actuator model."""

    plant = None

    def _plant(self) -> PlantParams:
        return self.plant if self.plant is not None else PlantParams()

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ValueError(f"{type(self).__name__} is not fitted yet; call fit first")

    def predict(self, X: Trajectory) -> np.ndarray:
        """Simulated joint angle for samples 1..T-1 of ``X``."""
        self._check_fitted()
        H = min(len(X) - 1, getattr(self.model_, "max_steps", len(X) - 1))
        q_sim, _ = simulate_trajectory(self.model_, X, self._plant(), H, step_config(X))
        return q_sim

    def evaluate(self, X: Trajectory, cfg: EvalConfig = EvalConfig()):
        self._check_fitted()
        return eval_mae(self.model_, X, self._plant(), cfg)

    def score(self, X: Trajectory, y=None) -> float:
        return -self.evaluate(X).mae


class _TrajectoryFit(_RolloutEstimator):
    """Segmented trajectory matching with Adam (the TrajID family)."""

    def _configs(self):
        seg_kw, opt_kw = _split_options(self.options, SegmentationConfig, OptimizerConfig)
        seg = SegmentationConfig(self.horizon, self.minibatch_size, **seg_kw)
        opt = OptimizerConfig(learning_rate=self.learning_rate, max_epochs=self.max_epochs,
                              patience=self.patience, seed=self.seed, **opt_kw)
        return seg, LossWeights.from_alpha(self.alpha), opt

    def _initial_model(self, trajs):
        raise NotImplementedError

    def fit(self, X, y=None, init_model=None):
        trajs = as_trajectories(X)
        seg, weights, opt = self._configs()
        model = init_model if init_model is not None else self._initial_model(trajs)
        self.report_ = fit_gradient(model, trajs, seg, weights, opt, self._plant(),
                                    step_config(trajs[0]))
        self.model_ = self.report_.model
        return self


class TrajIDParam(_TrajectoryFit):
    """Three-parameter model (kp, kv, armature) fitted through the simulator."""

    def __init__(self, alpha=1.0, horizon=3, minibatch_size=2000, learning_rate=1e-2,
                 max_epochs=3000, patience=200, init="random", seed=0, plant=None,
                 options=None):
        self.alpha = alpha
        self.horizon = horizon
        self.minibatch_size = minibatch_size
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.init = init
        self.seed = seed
        self.plant = plant
        self.options = options

    def _initial_model(self, trajs):
        return initial_param_model(self.init, self.seed)

    @property
    def params_(self) -> dict:
        self._check_fitted()
        return dict(zip(self.model_.free, self.model_.get_vector()))


class TrajIDNN(_TrajectoryFit):
    """MLP torque model on (q_des, q, qdot) fitted through the simulator."""

    def __init__(self, hidden_sizes=(32, 32), alpha=1.0, horizon=3, minibatch_size=2000,
                 learning_rate=1e-2, max_epochs=3000, patience=200, seed=0, plant=None,
                 options=None):
        self.hidden_sizes = hidden_sizes
        self.alpha = alpha
        self.horizon = horizon
        self.minibatch_size = minibatch_size
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.plant = plant
        self.options = options

    def _network(self, trajs) -> Mlp:
        sizes = (3, *self.hidden_sizes, 1)
        init_seed = int(derive_rng(self.seed, "network-init").integers(2**31))
        return Mlp.init(sizes, init_seed, Normalizer.fit(network_inputs(trajs)))

    def _initial_model(self, trajs):
        return MlpModel(self._network(trajs))


class TrajIDResidual(TrajIDNN):
    """Command-correction network ahead of a fixed PD regulator."""

    def _initial_model(self, trajs):
        return ResidualModel(self._network(trajs))


class _EsFit(_RolloutEstimator):
    def fit(self, X, y=None, init_model=None):
        trajs = as_trajectories(X)
        seg_kw, es_kw = _split_options(self.options, SegmentationConfig, EsConfig)
        seg = SegmentationConfig(self.horizon, self.minibatch_size, **seg_kw)
        es = EsConfig(population=self.population, sigma0=self.sigma0,
                      max_evaluations=self.max_evaluations, patience=self.patience,
                      seed=self.seed, **es_kw)
        model = init_model if init_model is not None else self._initial_model(trajs)
        self.report_ = fit_es(model, trajs, seg, LossWeights.from_alpha(self.alpha), es,
                              self._plant(), step_config(trajs[0]))
        self.model_ = self.report_.model
        return self


class ParamES(_EsFit):
    """The three-parameter model fitted by CMA-ES on the same loss."""

    def __init__(self, alpha=1.0, horizon=3, minibatch_size=2000, sigma0=0.3,
                 population=None, max_evaluations=3000, patience=200, init="random",
                 seed=0, plant=None, options=None):
        self.alpha = alpha
        self.horizon = horizon
        self.minibatch_size = minibatch_size
        self.sigma0 = sigma0
        self.population = population
        self.max_evaluations = max_evaluations
        self.patience = patience
        self.init = init
        self.seed = seed
        self.plant = plant
        self.options = options

    def _initial_model(self, trajs):
        return initial_param_model(self.init, self.seed)


class NNES(_EsFit):
    """The MLP torque model fitted by CMA-ES (gradient-free baseline)."""

    def __init__(self, hidden_sizes=(32, 32), alpha=1.0, horizon=3, minibatch_size=2000,
                 sigma0=0.1, population=None, max_evaluations=3000, patience=200, seed=0,
                 plant=None, options=None):
        self.hidden_sizes = hidden_sizes
        self.alpha = alpha
        self.horizon = horizon
        self.minibatch_size = minibatch_size
        self.sigma0 = sigma0
        self.population = population
        self.max_evaluations = max_evaluations
        self.patience = patience
        self.seed = seed
        self.plant = plant
        self.options = options

    _initial_model = TrajIDNN._initial_model
    _network = TrajIDNN._network


class TorqueOracle(_RolloutEstimator):
    """Free per-step torques fitted to the trajectory that will be scored.

    This is an expressiveness bound, not a predictor: ``fit`` takes the
    held-out trajectory itself and ``predict`` only makes sense on it.
    """

    def __init__(self, horizon=3, alpha=1.0, learning_rate=1e-2, max_epochs=3000,
                 patience=200, seed=0, plant=None, options=None):
        self.horizon = horizon
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.plant = plant
        self.options = options

    def fit(self, X, y=None, init_model=None):
        trajs = as_trajectories(X)
        if len(trajs) != 1:
            raise ValueError("the torque oracle is fitted to exactly one trajectory")
        (opt_kw,) = _split_options(self.options, OptimizerConfig)
        opt = OptimizerConfig(learning_rate=self.learning_rate, max_epochs=self.max_epochs,
                              patience=self.patience, seed=self.seed, **opt_kw)
        init = None if init_model is None else init_model.get_vector()
        self.report_ = fit_oracle(trajs[0], self.horizon, LossWeights.from_alpha(self.alpha),
                                  opt, self._plant(), step_config(trajs[0]), init=init)
        self.model_ = self.report_.model
        return self


class BenchSup(_RolloutEstimator):
    """PWM PD law composed with a torque map fitted on steady-state stand data."""

    def __init__(self, hidden_sizes=(128, 64), Kp=1.228, Kd=0.092, learning_rate=1e-2,
                 max_epochs=2000, patience=200, batch_size=256, seed=0, plant=None,
                 options=None):
        self.hidden_sizes = hidden_sizes
        self.Kp = Kp
        self.Kd = Kd
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.seed = seed
        self.plant = plant
        self.options = options

    def fit(self, X, y=None, init_model=None):
        """``X``: stand samples of shape (n, 3) with columns (u, qdot, tau)."""
        data = np.asarray(X, dtype=float)
        (opt_kw,) = _split_options(self.options, OptimizerConfig)
        opt = OptimizerConfig(learning_rate=self.learning_rate, max_epochs=self.max_epochs,
                              patience=self.patience, seed=self.seed, **opt_kw)
        init_seed = int(derive_rng(self.seed, "network-init").integers(2**31))
        net = init_model.net if init_model is not None else \
            Mlp.init((2, *self.hidden_sizes, 1), init_seed)
        t0 = time.perf_counter()
        self.model_ = fit_bench_supervised(data, net, opt, PwmPdParams(self.Kp, self.Kd),
                                           self.batch_size)
        self.report_ = None
        self.fit_seconds_ = time.perf_counter() - t0
        return self


ESTIMATORS = {
    "trajid-param": TrajIDParam,
    "trajid-nn": TrajIDNN,
    "trajid-residual": TrajIDResidual,
    "param-es": ParamES,
    "nn-es": NNES,
    "torque-oracle": TorqueOracle,
    "bench-sup": BenchSup,
}

# Study overrides and the estimator parameter each one maps to.
_OVERRIDES = {"alpha": "alpha", "horizon": "horizon", "seed": "seed"}


class Family:
    """Picklable ``fit(train, test, **overrides) -> (model, FitReport)`` for the studies.

    ``epochs`` maps to the estimator's iteration budget (``max_epochs`` or
    ``max_evaluations``). The torque oracle is fitted on ``test``; every
    other estimator on ``train``.
    """

    def __init__(self, estimator: BaseEstimator):
        self.estimator = estimator

    def __call__(self, train, test, **overrides):
        est = clone(self.estimator)
        params = est.get_params()
        updates = {}
        for key, value in overrides.items():
            if key == "epochs":
                name = "max_epochs" if "max_epochs" in params else "max_evaluations"
            else:
                name = _OVERRIDES.get(key)
            if name is None or name not in params:
                raise ValueError(f"{type(est).__name__} does not accept override {key!r}")
            updates[name] = value
        est.set_params(**updates)
        est.fit(test if isinstance(est, TorqueOracle) else train)
        report = est.report_
        if report is None:
            report = FitReport(est.model_, math.nan, 0, wall_clock=est.fit_seconds_)
        return est.model_, report


__all__ = ["TrajIDParam", "TrajIDNN", "TrajIDResidual", "ParamES", "NNES", "TorqueOracle",
           "BenchSup", "ESTIMATORS", "Family", "initial_param_model", "step_config",
           "as_trajectories", "DEFAULT_PARAM_INIT"]
