"""Random-Fourier excitation commands and synthetic measured datasets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .actuators import PdModel, ServoModel
from .dynamics import JointState, PlantParams, RolloutDivergence, StepConfig, rollout, stack_states
from .trajectory import Trajectory, derive_rng


def n_steps(duration: float, dt: float) -> int:
    n = int(round(duration / dt))
    if n < 1 or abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"duration {duration} is not an integral multiple of dt {dt}")
    return n


@dataclass(frozen=True)
class ExcitationSpec:
    num_modes_range: tuple = (3, 8)
    amplitude_range: tuple = (0.2, 2.0)
    frequency_range: tuple = (0.5, 15.0)
    phase_range: tuple = (0.0, 2 * np.pi)
    qdot_max: float = 6.0
    duration: float = 40.0
    dt: float = 0.002
    seed: int = 0

    def __post_init__(self):
        for name in ("num_modes_range", "amplitude_range", "frequency_range", "phase_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} is empty")
        if self.num_modes_range[0] < 1:
            raise ValueError("num_modes_range must start at 1 or more")
        if not self.qdot_max > 0:
            raise ValueError("qdot_max must be positive")
        n_steps(self.duration, self.dt)


def sample_modes(spec: ExcitationSpec, rng=None):
    """Draw (A_k, w_k, phi_k) arrays for one command."""
    rng = rng if rng is not None else derive_rng(spec.seed, "excitation")
    k = int(rng.integers(spec.num_modes_range[0], spec.num_modes_range[1] + 1))
    amp = rng.uniform(*spec.amplitude_range, size=k)
    freq = rng.uniform(*spec.frequency_range, size=k)
    phase = rng.uniform(*spec.phase_range, size=k)
    return amp, freq, phase


def fourier_velocity(t, amp, freq, phase, qdot_max=np.inf):
    qdot = np.sin(np.multiply.outer(t, freq) + phase) @ amp
    return np.clip(qdot, -qdot_max, qdot_max)


def synth_command(spec: ExcitationSpec, modes=None):
    """Position command from a clipped random-Fourier velocity profile.

    Returns ``(t, q_des, qdot_des)``; ``q_des`` starts at zero and is the
    cumulative trapezoid integral of ``qdot_des``.
    """
    n = n_steps(spec.duration, spec.dt)
    t = np.arange(n) * spec.dt
    amp, freq, phase = modes if modes is not None else sample_modes(spec)
    qdot_des = fourier_velocity(t, np.asarray(amp), np.asarray(freq), np.asarray(phase),
                                spec.qdot_max)
    q_des = cumulative_trapezoid(qdot_des, t, initial=0.0)
    return t, q_des, qdot_des


@dataclass(frozen=True)
class HiddenModelSpec:
    """Synthetic ground-truth actuator plus encoder noise.

    ``kind="servo"`` is a PWM-loop servo with duty saturation at
    ``torque_saturation`` and a first-order torque lag; ``kind="pd"`` is an
    exact PD law with no saturation and no lag.

    The encoder adds white noise ``noise_q`` to position. With
    ``velocity_source="difference"`` the logged velocity is the backward
    difference of the logged position (as servo firmware reports it), so it
    inherits amplified encoder noise; ``"sensor"`` logs the true velocity.
    ``noise_qdot`` adds independent white noise to the velocity channel in
    either case.
    """

    kind: str = "servo"
    kp: float = 3.684
    kv: float = 0.552
    armature: float = 0.00321
    torque_saturation: float = 3.0
    emf_fraction: float = 0.5
    lag: float = 0.01
    noise_q: float = 1e-5
    noise_qdot: float = 0.0
    velocity_source: str = "difference"

    def __post_init__(self):
        if self.kind not in ("servo", "pd"):
            raise ValueError(f"unknown hidden model kind {self.kind!r}")
        if self.velocity_source not in ("difference", "sensor"):
            raise ValueError(f"unknown velocity source {self.velocity_source!r}")
        if self.noise_q < 0 or self.noise_qdot < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if not self.torque_saturation > 0 or self.lag < 0:
            raise ValueError("torque_saturation must be positive and lag non-negative")

    def build(self, dt=0.002):
        if self.kind == "pd":
            return PdModel(self.kp, self.kv, self.armature)
        return ServoModel.from_pd(self.kp, self.kv, self.armature, stall=self.torque_saturation,
                                  emf_fraction=self.emf_fraction, lag=self.lag, dt=dt)


def simulate(model, t, q_des, plant: PlantParams, cfg: StepConfig, initial=JointState(0.0, 0.0)):
    """Noiseless states at every sample time, initial state included."""
    states = rollout(initial, q_des[:-1], model, plant, cfg)
    q, qdot = stack_states(states)
    return np.concatenate([[initial.q], q]), np.concatenate([[initial.qdot], qdot])


def generate_dataset(spec: ExcitationSpec, hidden: HiddenModelSpec = HiddenModelSpec(),
                     plant: PlantParams = PlantParams()) -> Trajectory:
    """Roll the hidden actuator under a synthesized command and log noisy states."""
    cfg = StepConfig(spec.dt)
    t, q_des, _ = synth_command(spec)
    try:
        q, qdot = simulate(hidden.build(spec.dt), t, q_des, plant, cfg)
    except RolloutDivergence as exc:
        raise RolloutDivergence(exc.step_index, f"hidden rollout diverged at step "
                                f"{exc.step_index} for {spec}") from None
    rng = derive_rng(spec.seed, "sensor-noise")
    q_log = q + rng.normal(0.0, 1.0, len(t)) * hidden.noise_q
    qdot_log = qdot + rng.normal(0.0, 1.0, len(t)) * hidden.noise_qdot
    if hidden.velocity_source == "difference":
        qdot_log[1:] += np.diff(q_log) / spec.dt - qdot[1:]
    return Trajectory(t, q_des, q_log, qdot_log, q_true=q, qdot_true=qdot)


def default_datasets(seed=0, hidden=HiddenModelSpec(), plant=PlantParams(),
                     train_duration=40.0, test_duration=10.0, dt=0.002, **spec_kw):
    """Training and held-out trajectories with independent command draws."""
    train = generate_dataset(ExcitationSpec(duration=train_duration, dt=dt, seed=seed, **spec_kw),
                             hidden, plant)
    test_seed = int(derive_rng(seed, "test-trajectory").integers(2**31))
    test = generate_dataset(ExcitationSpec(duration=test_duration, dt=dt, seed=test_seed,
                                           **spec_kw), hidden, plant)
    return train, test


def stand_sweep(hidden: HiddenModelSpec, duties=None, n_speeds=60, load_limit=None,
                torque_noise=0.01, seed=0):
    """Steady-state test-stand samples ``(u, qdot, tau)`` of the hidden servo.

    For each commanded duty the brake sweeps the load, which sweeps the steady
    speed from slightly reversed up to the no-load speed. Points whose
    torque magnitude exceeds ``load_limit`` (default 75% of stall) are not
    collected, leaving the high-load low-speed region uncovered.
    """
    servo = hidden.build()
    if not isinstance(servo, ServoModel) or np.isinf(servo.stall):
        raise ValueError("the test stand needs a duty-driven servo hidden model")
    if duties is None:
        duties = np.linspace(-1.0, 1.0, 21)
    if load_limit is None:
        load_limit = 0.75 * servo.stall
    rng = derive_rng(seed, "stand")
    rows = []
    for u in duties:
        v_free = servo.stall * u / servo.emf
        speeds = np.linspace(-0.2 * v_free, v_free, n_speeds) if u != 0 else \
            np.linspace(-1.0, 1.0, n_speeds)
        tau = servo.steady_torque(u, speeds)
        keep = np.abs(tau) <= load_limit
        for v, tq in zip(speeds[keep], tau[keep]):
            rows.append((u, v, tq + rng.normal(0.0, torque_noise)))
    return np.array(rows)
