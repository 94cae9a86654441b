"""Segmented trajectory matching and the optimizers that minimize it."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .actuators import BenchSupModel, Mlp, Normalizer, PwmPdParams, TorqueSequenceModel
from .dynamics import JointState, PlantParams, RolloutDivergence, StepConfig, rollout
from .trajectory import Trajectory, derive_rng


class FitDivergence(FloatingPointError):
    """Loss or gradient became non-finite; ``report`` holds the trace so far."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SegmentationConfig:
    segment_length: int = 3
    minibatch_size: int = 2000
    overlap: bool = True
    full_batch: bool = False

    def __post_init__(self):
        if self.segment_length < 1 or self.minibatch_size < 1:
            raise ValueError("segment_length and minibatch_size must be >= 1")


@dataclass(frozen=True)
class LossWeights:
    w_q: float = 1.0
    w_qdot: float = 0.0

    def __post_init__(self):
        if self.w_q < 0 or self.w_qdot < 0 or (self.w_q == 0 and self.w_qdot == 0):
            raise ValueError("loss weights must be non-negative and not both zero")

    @classmethod
    def from_alpha(cls, alpha: float) -> "LossWeights":
        return cls(alpha, 1.0 - alpha)


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 3000
    patience: int = 200
    min_delta: float = 0.0
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 0 or self.max_epochs < 0 or self.eval_every < 1:
            raise ValueError("patience/max_epochs must be >= 0 and eval_every >= 1")


@dataclass(frozen=True)
class EsConfig:
    population: int | None = None
    sigma0: float = 0.3
    max_evaluations: int = 3000
    patience: int = 200
    min_delta: float = 0.0
    eval_every: int = 1
    seed: int = 0


@dataclass
class FitReport:
    model: object
    best_loss: float
    best_epoch: int
    losses: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    params: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    evaluations: int = 0
    wall_clock: float = 0.0
    termination: str = ""

    @property
    def best_params(self) -> np.ndarray:
        return self.model.get_vector()


# -- segments ----------------------------------------------------------------

@dataclass
class Segments:
    """A batch of windows: columns are segments, rows are steps."""

    start: np.ndarray      # (B,) absolute index of s_0
    q0: np.ndarray         # (B,)
    qdot0: np.ndarray      # (B,)
    commands: np.ndarray   # (N, B)
    q: np.ndarray          # (N, B) targets s_1..s_N
    qdot: np.ndarray       # (N, B)

    def __len__(self):
        return len(self.start)

    @property
    def horizon(self) -> int:
        return self.commands.shape[0]

    def take(self, idx) -> "Segments":
        return Segments(self.start[idx], self.q0[idx], self.qdot0[idx],
                        self.commands[:, idx], self.q[:, idx], self.qdot[:, idx])

    @classmethod
    def concat(cls, parts) -> "Segments":
        return cls(*(np.concatenate([getattr(p, f) for p in parts], axis=-1)
                     for f in ("start", "q0", "qdot0", "commands", "q", "qdot")))


def make_segments(traj: Trajectory, N: int, stride: int = 1) -> Segments:
    """Windows of N transitions rolled out from the measured state at their start."""
    L = len(traj)
    if N < 1:
        raise ValueError("segment length must be >= 1")
    if L <= N:
        raise ValueError(f"trajectory of length {L} is too short for segments of length {N}")
    start = np.arange(0, L - N, stride)
    rows = start[None, :] + np.arange(N + 1)[:, None]
    return Segments(start, traj.q[start], traj.qdot[start], traj.q_des[rows[:-1]],
                    traj.q[rows[1:]], traj.qdot[rows[1:]])


def segments_for(trajs, seg: SegmentationConfig) -> Segments:
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    stride = 1 if seg.overlap else seg.segment_length
    return Segments.concat([make_segments(t, seg.segment_length, stride) for t in trajs])


# -- loss ----------------------------------------------------------------------

def batch_loss(model, segments: Segments, weights: LossWeights, plant: PlantParams,
               cfg: StepConfig = StepConfig()):
    """Mean over segments and steps of ||W (s' - s)||^2.

    Returns an autodiff node when the model carries tape parameters.
    """
    try:
        states = rollout(JointState(segments.q0, segments.qdot0), segments.commands, model,
                         plant, cfg, start_index=segments.start)
    except RolloutDivergence as exc:
        bad = _first_bad_segment(exc, model, segments, plant, cfg)
        raise RolloutDivergence(exc.step_index, f"rollout diverged at step {exc.step_index} "
                                f"in segment {bad}") from None
    total = 0.0
    wq2, wv2 = weights.w_q**2, weights.w_qdot**2
    for i, s in enumerate(states):
        if wq2:
            total = total + wq2 * ad.sum(ad.square(s.q - segments.q[i]))
        if wv2:
            total = total + wv2 * ad.sum(ad.square(s.qdot - segments.qdot[i]))
    return total * (1.0 / (len(segments) * segments.horizon))


def residuals(model, z, segments: Segments, weights: LossWeights, plant: PlantParams,
              cfg: StepConfig = StepConfig()) -> np.ndarray:
    """Weighted residuals W (s' - s) of every segment step, flattened.

    ``batch_loss`` equals ``sum(residuals**2) / (M N)``.
    """
    states = rollout(JointState(segments.q0, segments.qdot0), segments.commands,
                     model.with_vector(np.asarray(z, dtype=float)), plant, cfg,
                     start_index=segments.start)
    parts = []
    for i, st in enumerate(states):
        if weights.w_q:
            parts.append(weights.w_q * (st.q - segments.q[i]))
        if weights.w_qdot:
            parts.append(weights.w_qdot * (st.qdot - segments.qdot[i]))
    return np.concatenate(parts)


def _first_bad_segment(exc, model, segments, plant, cfg):
    numeric = model.with_vector(model.get_vector())
    state = JointState(segments.q0, segments.qdot0)
    states = rollout_unchecked(state, segments.commands, numeric, plant, cfg, segments.start)
    for s in states:
        bad = ~(np.isfinite(s.q) & np.isfinite(s.qdot))
        if np.any(bad):
            return int(np.flatnonzero(bad)[0])
    return -1


def rollout_unchecked(state, commands, model, plant, cfg, start_index=0):
    plant = model.plant_for(plant)
    ctrl = model.start()
    from .dynamics import step
    out = []
    with np.errstate(all="ignore"):
        for i, a in enumerate(commands):
            state = step(state, ctrl.torque(a, state.q, state.qdot, start_index + i), plant, cfg)
            out.append(state)
    return out


def loss_and_grad(model, z, segments, weights, plant, cfg=StepConfig()):
    """Batch loss and its gradient w.r.t. the flat parameter vector ``z``."""
    tape = ad.Tape()
    zv = tape.var(z)
    loss = batch_loss(model.with_vector(zv), segments, weights, plant, cfg)
    if not ad.is_var(loss):
        return float(loss), np.zeros(len(z))
    return float(loss.value), ad.backward(loss, [zv])


def loss_at(model, z, segments, weights, plant, cfg=StepConfig()) -> float:
    return float(batch_loss(model.with_vector(np.asarray(z, dtype=float)), segments, weights,
                            plant, cfg))


@dataclass
class GradientCheck:
    """Analytic vs central-difference gradient on selected coordinates."""

    index: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    relative_error: np.ndarray
    kink: np.ndarray          # a branch switch (clip, relu, min/max) lies within h

    @property
    def max_error(self) -> float:
        ok = ~self.kink
        return float(self.relative_error[ok].max()) if np.any(ok) else 0.0


def gradient_check(model, z, segments: Segments, weights: LossWeights, plant: PlantParams,
                   cfg: StepConfig = StepConfig(), index=None, rel_step: float = 1e-6,
                   kink_tol: float = 1e-3) -> GradientCheck:
    """Compare ``loss_and_grad`` with central differences, h = rel_step * max(1, |z_i|).

    The relative error is ``|a - n| / max(|a|, |n|, floor)`` with ``floor``
    1e-10 of the largest analytic partial, so exactly-zero partials do not
    divide by zero. A coordinate is flagged as a kink when its forward and
    backward one-sided differences disagree by more than ``kink_tol``
    relative: a subgradient boundary lies within ``h`` and central
    differences are not meaningful there.
    """
    z = np.asarray(z, dtype=float)
    index = np.arange(len(z)) if index is None else np.asarray(index)
    _, g = loss_and_grad(model, z, segments, weights, plant, cfg)
    f0 = loss_at(model, z, segments, weights, plant, cfg)
    numeric, kink = np.zeros(len(index)), np.zeros(len(index), dtype=bool)
    for k, i in enumerate(index):
        h = rel_step * max(1.0, abs(z[i]))
        e = np.zeros_like(z)
        e[i] = h
        fp = loss_at(model, z + e, segments, weights, plant, cfg)
        fm = loss_at(model, z - e, segments, weights, plant, cfg)
        numeric[k] = (fp - fm) / (2 * h)
        d_plus, d_minus = (fp - f0) / h, (f0 - fm) / h
        kink[k] = abs(d_plus - d_minus) > kink_tol * max(abs(d_plus), abs(d_minus), 1e-300)
    analytic = g[index]
    floor = 1e-10 * max(np.max(np.abs(g)), 1e-300)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic),
                                                             np.abs(numeric)), floor)
    return GradientCheck(index, analytic, numeric, rel, kink)


# -- optimizer coordinates ------------------------------------------------------

@dataclass(frozen=True)
class Coordinates:
    """Affine optimizer coordinates: ``z = origin + A u``.

    ``A`` is a vector (per-parameter scales) or a square matrix.
    """

    origin: np.ndarray
    A: np.ndarray
    kappa: float | None = None

    def to_z(self, u):
        return self.origin + (self.A @ u if self.A.ndim == 2 else self.A * u)

    def to_u(self, z):
        d = np.asarray(z, dtype=float) - self.origin
        return np.linalg.solve(self.A, d) if self.A.ndim == 2 else d / self.A

    def grad_u(self, g_z):
        return self.A.T @ g_z if self.A.ndim == 2 else self.A * g_z


def diagonal_coordinates(model) -> Coordinates:
    return Coordinates(np.zeros(model.n_params), np.asarray(model.scales, dtype=float))


def curvature_coordinates(model, segments: Segments, weights: LossWeights, plant: PlantParams,
                          cfg: StepConfig = StepConfig(), kappa: float | None = None,
                          rel_step: float = 1e-6, kappa_floor: float = 0.0) -> Coordinates:
    """Whitened coordinates from the Gauss-Newton curvature at ``model``.

    In these coordinates the loss Hessian is about ``kappa * I``, so Adam's
    steps are equally effective along every direction, including the shallow
    valley along which gains and inertia trade off. ``kappa`` defaults to
    ``CURVATURE_GAIN`` times the loss at ``model``, but not below
    ``kappa_floor``. Meant for models with a handful of parameters (one
    finite-difference Jacobian).
    """
    if kappa is None:
        kappa = CURVATURE_GAIN * loss_at(model, model.get_vector(), segments, weights, plant, cfg)
    kappa = max(kappa, kappa_floor)
    z0 = model.get_vector()
    cols = []
    for i in range(len(z0)):
        h = rel_step * max(1.0, abs(z0[i]))
        e = np.zeros_like(z0)
        e[i] = h
        lo = z0 - e
        if np.isfinite(model.lower[i]) and lo[i] < model.lower[i]:   # one-sided at a bound
            cols.append((residuals(model, z0 + e, segments, weights, plant, cfg)
                         - residuals(model, z0, segments, weights, plant, cfg)) / h)
        else:
            cols.append((residuals(model, z0 + e, segments, weights, plant, cfg)
                         - residuals(model, lo, segments, weights, plant, cfg)) / (2 * h))
    J = np.column_stack(cols)
    H = 2.0 * (J.T @ J) / (len(segments) * segments.horizon)
    lam, V = np.linalg.eigh(H)
    lam = np.maximum(lam, 1e-12 * max(lam.max(), 1e-300))
    kappa = max(float(kappa), 1e-300)
    return Coordinates(z0.copy(), V * np.sqrt(kappa / lam), kappa)


# -- Adam + early stopping -------------------------------------------------------

class Adam:
    def __init__(self, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, x, g):
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class EarlyStopping:
    def __init__(self, patience=200, min_delta=0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.wait = 0

    def update(self, value) -> bool:
        """Record ``value``; True when it is a new best."""
        if value < self.best - self.min_delta or self.best == math.inf:
            self.best = value
            self.wait = 0
            return True
        self.wait += 1
        return False

    @property
    def stop(self) -> bool:
        return self.wait >= self.patience


def _sample(rng, n_total, seg: SegmentationConfig):
    if seg.full_batch:
        return slice(None)
    return rng.integers(0, n_total, seg.minibatch_size)


CURVATURE_MAX_PARAMS = 8
CURVATURE_GAIN = 10.0


def fit_gradient(model_init, train, seg: SegmentationConfig = SegmentationConfig(),
                 weights: LossWeights = LossWeights(), opt: OptimizerConfig = OptimizerConfig(),
                 plant: PlantParams = PlantParams(), cfg: StepConfig = StepConfig(),
                 snapshot_limit: int = 64, objective_scale: float = 1.0,
                 coords: Coordinates | str | None = "auto",
                 refresh_every: int = 100) -> FitReport:
    """Adam on the segmented trajectory-matching loss with best-on-full-set retention.

    ``train`` is a Trajectory, a list of them, or prebuilt ``Segments``.
    Adam runs in coordinates ``u`` with ``z = coords.to_z(u)``: ``"auto"``
    whitens the curvature at the initial point for models with at most
    ``CURVATURE_MAX_PARAMS`` parameters and otherwise uses ``model.scales``.
    Parameters are projected onto ``model.lower`` after every step. Per-epoch parameter
    snapshots are kept only for models with at most ``snapshot_limit``
    parameters. ``objective_scale`` multiplies the gradient handed to Adam
    (reported losses are unaffected); it only matters through Adam's epsilon.
    """
    t0 = time.perf_counter()
    segments = train if isinstance(train, Segments) else segments_for(train, seg)
    rng = derive_rng(opt.seed, "segment-sampling")
    if coords == "auto":
        coords = "curvature" if model_init.n_params <= CURVATURE_MAX_PARAMS else None
    curvature = coords == "curvature"
    # Near the optimum Adam's update is gradient descent with step lr/eps; a
    # curvature of 0.3 eps/lr makes that contract by 0.3 per epoch.
    kappa_floor = 0.3 * opt.eps / opt.learning_rate
    z = model_init.get_vector()
    report = FitReport(model_init, math.inf, 0)
    try:
        report.best_loss = loss_at(model_init, z, segments, weights, plant, cfg)
    except RolloutDivergence as exc:
        raise FitDivergence(f"initial parameters: {exc}", report) from None
    if not np.isfinite(report.best_loss):
        raise FitDivergence("initial parameters give a non-finite loss", report)
    if curvature:
        coords = curvature_coordinates(model_init, segments, weights, plant, cfg,
                                       kappa_floor=kappa_floor)
    elif coords is None:
        coords = diagonal_coordinates(model_init)
    u = coords.to_u(z)
    stopper = EarlyStopping(opt.patience, opt.min_delta)
    keep_params = model_init.n_params <= snapshot_limit

    stopper.update(report.best_loss)
    try:
        termination = _adam_loop(report, model_init, z, u, coords, curvature, kappa_floor,
                                 segments, seg, weights, opt, plant, cfg, rng, stopper,
                                 keep_params, objective_scale, refresh_every)
    except RolloutDivergence as exc:
        raise FitDivergence(str(exc), report) from None
    report.evaluations = len(report.epochs)
    report.wall_clock = time.perf_counter() - t0
    report.termination = termination
    return report


def _adam_loop(report, model_init, z, u, coords, curvature, kappa_floor, segments, seg,
               weights, opt, plant, cfg, rng, stopper, keep_params, objective_scale,
               refresh_every) -> str:
    """Epoch loop of ``fit_gradient``; updates ``report`` in place, returns the termination."""
    lower = model_init.lower
    adam = Adam(opt.learning_rate, opt.beta1, opt.beta2, opt.eps)
    best_z = z.copy()
    report.model = model_init.with_vector(best_z)
    termination = "max_epochs"
    for epoch in range(1, opt.max_epochs + 1):
        if curvature and refresh_every and epoch % refresh_every == 0:
            coords = curvature_coordinates(model_init.with_vector(z), segments, weights, plant,
                                           cfg, kappa_floor=kappa_floor)
            u = coords.to_u(z)
            adam = Adam(opt.learning_rate, opt.beta1, opt.beta2, opt.eps)
        batch = segments.take(_sample(rng, len(segments), seg))
        loss, g_z = loss_and_grad(model_init, z, batch, weights, plant, cfg)
        gnorm = float(np.linalg.norm(g_z))
        if not (np.isfinite(loss) and np.all(np.isfinite(g_z))):
            report.model = model_init.with_vector(best_z)
            raise FitDivergence(f"non-finite loss or gradient at epoch {epoch}", report)
        u = adam.step(u, coords.grad_u(g_z) * objective_scale)
        z = coords.to_z(u)
        if np.any(z < lower):
            z = np.maximum(z, lower)
            u = coords.to_u(z)

        report.epochs.append(epoch)
        report.batch_losses.append(loss)
        report.grad_norms.append(gnorm)
        if keep_params:
            report.params.append(z.copy())
        if epoch % opt.eval_every == 0:
            full = loss_at(model_init, z, segments, weights, plant, cfg)
            if not np.isfinite(full):
                report.model = model_init.with_vector(best_z)
                raise FitDivergence(f"non-finite training loss at epoch {epoch}", report)
            report.losses.append(full)
            if stopper.update(full):
                best_z = z.copy()
                report.best_loss = full
                report.best_epoch = epoch
                report.model = model_init.with_vector(best_z)
            if stopper.stop:
                termination = "early_stopping"
                break
        else:
            report.losses.append(math.nan)
    return termination


# -- torque oracle -----------------------------------------------------------------

def oracle_segments(traj: Trajectory, horizon: int) -> Segments:
    """Contiguous, non-overlapping windows tiling ``traj``.

    Every window is an independent problem with its own ``horizon`` torques;
    trailing transitions that do not fill a window are left out.
    """
    segments = make_segments(traj, horizon, horizon)
    return segments.take(np.flatnonzero(segments.start + horizon <= oracle_length(traj, horizon)))


def oracle_length(traj: Trajectory, horizon: int) -> int:
    return ((len(traj) - 1) // horizon) * horizon


def fit_oracle(traj: Trajectory, horizon: int = 3, weights: LossWeights = LossWeights(),
               opt: OptimizerConfig = OptimizerConfig(), plant: PlantParams = PlantParams(),
               cfg: StepConfig = StepConfig(), init=None) -> FitReport:
    """Free torque sequence fitted on ``traj`` itself (full batch every epoch)."""
    n = oracle_length(traj, horizon)
    segments = oracle_segments(traj, horizon)
    tau0 = np.zeros(n) if init is None else np.asarray(init, dtype=float)
    if tau0.shape != (n,):
        raise ValueError(f"initial torque sequence must have length {n}")
    model = TorqueSequenceModel(tau0, horizon)
    seg = SegmentationConfig(horizon, len(segments), full_batch=True)
    # Windows are independent problems: optimize each one's own loss (sum over
    # windows) rather than the mean, which would shrink every gradient by the
    # window count and leave Adam working below its epsilon.
    return fit_gradient(model, segments, seg, weights, opt, plant, cfg,
                        objective_scale=float(len(segments)))


class CMAES:
    """(mu/mu_w, lambda) CMA-ES with rank-one and rank-mu covariance updates."""

    def __init__(self, x0, sigma0, population=None, seed=0):
        self.dim = n = len(x0)
        self.mean = np.asarray(x0, dtype=float).copy()
        self.sigma = float(sigma0)
        self.lam = population or 4 + int(3 * np.log(n))
        self.mu = max(1, self.lam // 2)
        w = np.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights**2)
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1,
                       2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, np.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = np.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self.C = np.eye(n)
        self.invsqrtC = np.eye(n)
        self.generation = 0
        self._eigen_at = 0
        self.rng = np.random.default_rng(seed)

    def ask(self):
        z = self.rng.standard_normal((self.lam, self.dim))
        return self.mean + self.sigma * (z * self.D) @ self.B.T

    def tell(self, X, f):
        n = self.dim
        order = np.argsort(f, kind="stable")
        xs = X[order[:self.mu]]
        old = self.mean
        if self.sigma == 0:
            return
        self.mean = self.weights @ xs
        y = (self.mean - old) / self.sigma
        self.generation += 1
        self.ps = (1 - self.cs) * self.ps + np.sqrt(self.cs * (2 - self.cs) * self.mueff) \
            * (self.invsqrtC @ y)
        norm_ps = np.linalg.norm(self.ps)
        hsig = norm_ps / np.sqrt(1 - (1 - self.cs) ** (2 * self.generation)) / self.chi_n \
            < 1.4 + 2 / (n + 1)
        self.pc = (1 - self.cc) * self.pc + hsig * np.sqrt(self.cc * (2 - self.cc) * self.mueff) * y
        artmp = (xs - old) / self.sigma
        self.C = ((1 - self.c1 - self.cmu) * self.C
                  + self.c1 * (np.outer(self.pc, self.pc)
                               + (1 - hsig) * self.cc * (2 - self.cc) * self.C)
                  + self.cmu * (artmp.T * self.weights) @ artmp)
        self.sigma *= np.exp((self.cs / self.damps) * (norm_ps / self.chi_n - 1))
        lazy_gap = self.lam / (self.c1 + self.cmu) / n / 10
        if self.generation - self._eigen_at > lazy_gap:
            self._eigen_at = self.generation
            self.C = np.triu(self.C) + np.triu(self.C, 1).T
            d2, self.B = np.linalg.eigh(self.C)
            self.D = np.sqrt(np.maximum(d2, 1e-300))
            self.invsqrtC = (self.B / self.D) @ self.B.T


def fit_es(model_init, train, seg: SegmentationConfig = SegmentationConfig(),
           weights: LossWeights = LossWeights(), es: EsConfig = EsConfig(),
           plant: PlantParams = PlantParams(), cfg: StepConfig = StepConfig(),
           snapshot_limit: int = 64) -> FitReport:
    """Gradient-free fit of the same segmented loss.

    Each generation scores all candidates on one shared minibatch; every
    candidate costs one loss evaluation against ``es.max_evaluations``. The
    search runs in the model's scaled coordinates with candidates clamped to
    the lower bounds; the distribution mean is scored on the full set for
    best retention and early stopping.
    """
    t0 = time.perf_counter()
    segments = train if isinstance(train, Segments) else segments_for(train, seg)
    rng = derive_rng(es.seed, "segment-sampling")
    scales = model_init.scales
    lower = model_init.lower / scales
    strategy = CMAES(model_init.get_vector() / scales, es.sigma0, es.population,
                     seed=int(derive_rng(es.seed, "es").integers(2**31)))
    stopper = EarlyStopping(es.patience, es.min_delta)
    keep_params = model_init.n_params <= snapshot_limit

    report = FitReport(model_init, math.inf, 0)
    best_u = strategy.mean.copy()
    report.best_loss = loss_at(model_init, best_u * scales, segments, weights, plant, cfg)
    stopper.update(report.best_loss)
    termination = "max_evaluations"
    evaluations = 0
    while evaluations + strategy.lam <= es.max_evaluations:
        batch = segments.take(_sample(rng, len(segments), seg))
        X = np.maximum(strategy.ask(), lower)
        f = np.array([_safe_loss(model_init, x * scales, batch, weights, plant, cfg) for x in X])
        evaluations += len(X)
        strategy.tell(X, f)
        gen = strategy.generation if strategy.sigma > 0 else len(report.epochs) + 1
        u = np.maximum(strategy.mean, lower)
        report.epochs.append(gen)
        report.batch_losses.append(float(np.min(f)))
        report.grad_norms.append(math.nan)
        if keep_params:
            report.params.append(u * scales)
        if gen % es.eval_every == 0:
            full = _safe_loss(model_init, u * scales, segments, weights, plant, cfg)
            report.losses.append(full)
            if stopper.update(full):
                best_u = u.copy()
                report.best_loss = full
                report.best_epoch = gen
            if stopper.stop:
                termination = "early_stopping"
                break
        else:
            report.losses.append(math.nan)
    report.model = model_init.with_vector(best_u * scales)
    report.evaluations = evaluations
    report.wall_clock = time.perf_counter() - t0
    report.termination = termination
    return report


def _safe_loss(model, z, segments, weights, plant, cfg):
    try:
        value = loss_at(model, z, segments, weights, plant, cfg)
    except (RolloutDivergence, ad.DomainError):
        return math.inf
    return value if np.isfinite(value) else math.inf


# -- supervised test-stand map ----------------------------------------------------------

def fit_bench_supervised(stand_data, map_init: Mlp | None = None,
                         opt: OptimizerConfig = OptimizerConfig(max_epochs=3000),
                         pwm: PwmPdParams = PwmPdParams(), batch_size: int = 256,
                         standardize: bool = True) -> BenchSupModel:
    """Fit the (duty, velocity) -> torque map by mean squared error with Adam."""
    data = np.asarray(stand_data, dtype=float)
    if data.ndim != 2 or len(data) == 0 or data.shape[1] != 3:
        raise ValueError("stand data must be a non-empty (n, 3) array of (u, qdot, tau)")
    X, y = data[:, :2], data[:, 2]
    norm = Normalizer.fit(X) if standardize else Normalizer.identity(2)
    net = map_init if map_init is not None else Mlp.init((2, 128, 64, 1), seed=opt.seed)
    net = replace(net, normalizer=norm)
    rng = derive_rng(opt.seed, "bench-batches")
    adam = Adam(opt.learning_rate, opt.beta1, opt.beta2, opt.eps)
    z = net.get_vector()
    best_z, best = z.copy(), math.inf
    stopper = EarlyStopping(opt.patience, opt.min_delta)
    for _ in range(opt.max_epochs):
        idx = rng.integers(0, len(X), min(batch_size, len(X)))
        tape = ad.Tape()
        zv = tape.var(z)
        pred = net.with_vector(zv)(X[idx, 0], X[idx, 1])
        loss = ad.mean(ad.square(pred - y[idx]))
        z = adam.step(z, ad.backward(loss, [zv]))
        full = float(np.mean((net.with_vector(z)(X[:, 0], X[:, 1]) - y) ** 2))
        if stopper.update(full):
            best_z, best = z.copy(), full
        if stopper.stop:
            break
    return BenchSupModel(pwm, net.with_vector(best_z))


def bench_mse(model: BenchSupModel, stand_data) -> float:
    data = np.asarray(stand_data, dtype=float)
    return float(np.mean((model.net(data[:, 0], data[:, 1]) - data[:, 2]) ** 2))


__all__ = [
    "SegmentationConfig", "LossWeights", "OptimizerConfig", "EsConfig", "FitReport",
    "FitDivergence", "Segments", "make_segments", "segments_for", "batch_loss",
    "residuals", "loss_and_grad", "loss_at", "GradientCheck", "gradient_check", "Coordinates", "diagonal_coordinates",
    "curvature_coordinates", "Adam", "EarlyStopping", "fit_gradient", "fit_oracle",
    "oracle_segments", "oracle_length", "CMAES", "fit_es", "fit_bench_supervised", "bench_mse",
]
