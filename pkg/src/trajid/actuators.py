"""Actuator models: maps from (q_des, q, qdot) to joint torque.

Every model exposes the same small surface so the rollout, the fitters and
the serializer can treat them uniformly:

* ``get_vector()`` / ``with_vector(z)`` move between the model and its flat
  parameter vector. ``z`` may be an autodiff node, in which case the returned
  model computes torques on the tape.
* ``scales`` and ``lower`` describe the optimizer coordinates (parameters are
  optimized as ``z / scales`` and clamped at ``lower``).
* ``plant_for(plant)`` returns the plant the model simulates with, and
  ``start()`` returns the per-rollout controller (the model itself unless the
  model carries internal state).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .dynamics import PlantParams

RESIDUAL_KP = 5.0
RESIDUAL_KV = 1.0


class NotFittedError(ValueError):
    """A model component that must be trained or fitted was used before that."""


class IdentifiabilityWarning(UserWarning):
    pass


def pd_torque(q_des, q, qdot, kp, kv):
    return kp * (q_des - q) - kv * qdot


def pwm_duty(q_des, q, qdot, Kp, Kd):
    """Embedded PWM position loop with hard duty saturation."""
    return ad.clip(Kp * (q_des - q) - Kd * qdot, -1.0, 1.0)


class ActuatorModel:
    kind = "base"

    def plant_for(self, plant: PlantParams) -> PlantParams:
        return plant

    def start(self):
        return self

    def torque(self, q_des, q, qdot, index=None):
        raise NotImplementedError

    def get_vector(self) -> np.ndarray:
        raise NotImplementedError

    def with_vector(self, z):
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return len(self.get_vector())

    @property
    def scales(self) -> np.ndarray:
        return np.ones(self.n_params)

    @property
    def lower(self) -> np.ndarray:
        return np.full(self.n_params, -np.inf)


# -- parametric PD ---------------------------------------------------------

PD_FIELDS = ("kp", "kv", "armature", "damping", "frictionloss")


@dataclass(frozen=True)
class PdModel(ActuatorModel):
    """PD torque law plus co-fitted joint terms.

    ``free`` names the fitted fields; the default (kp, kv, armature) is the
    three-parameter parametric model. ``damping`` and ``frictionloss`` fall
    back to the plant's values when left at ``None``.
    """

    kp: object = 3.684
    kv: object = 0.552
    armature: object = 0.00321
    damping: object = None
    frictionloss: object = None
    free: tuple = ("kp", "kv", "armature")
    kind = "pd"

    def __post_init__(self):
        unknown = set(self.free) - set(PD_FIELDS)
        if unknown:
            raise ValueError(f"unknown PD fields: {sorted(unknown)}")
        if "kv" in self.free and "damping" in self.free:
            warnings.warn("kv and plant damping enter the dynamics as the same "
                          "velocity coefficient; freezing damping",
                          IdentifiabilityWarning, stacklevel=3)
            object.__setattr__(self, "free", tuple(f for f in self.free if f != "damping"))
        for name in self.free:
            if getattr(self, name) is None:
                object.__setattr__(self, name, 0.0)

    def torque(self, q_des, q, qdot, index=None):
        return pd_torque(q_des, q, qdot, self.kp, self.kv)

    def plant_for(self, plant):
        overrides = {"armature": self.armature}
        if self.damping is not None:
            overrides["damping"] = self.damping
        if self.frictionloss is not None:
            overrides["frictionloss"] = self.frictionloss
        return plant.with_overrides(**overrides)

    def get_vector(self):
        return np.array([ad.value_of(getattr(self, f)) for f in self.free], dtype=float)

    def with_vector(self, z):
        return replace(self, **{f: z[i] for i, f in enumerate(self.free)})

    @property
    def lower(self):
        return np.zeros(len(self.free))


# -- multilayer perceptron -------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))
        if np.any(self.scale <= 0):
            raise ValueError("normalizer scales must be strictly positive")

    @classmethod
    def fit(cls, X) -> "Normalizer":
        X = np.asarray(X, dtype=float)
        scale = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(scale > 0, scale, 1.0))

    @classmethod
    def identity(cls, n) -> "Normalizer":
        return cls(np.zeros(n), np.ones(n))


def glorot_init(sizes, seed=0):
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-bound, bound, (fan_in, fan_out)), np.zeros(fan_out)))
    return layers


@dataclass(frozen=True)
class Mlp:
    """Feed-forward ReLU network with a linear scalar output."""

    sizes: tuple
    layers: list
    normalizer: Normalizer | None = None

    @classmethod
    def init(cls, sizes, seed=0, normalizer=None):
        return cls(tuple(sizes), glorot_init(sizes, seed), normalizer)

    @classmethod
    def zeros(cls, sizes, normalizer=None):
        layers = [(np.zeros((a, b)), np.zeros(b)) for a, b in zip(sizes[:-1], sizes[1:])]
        return cls(tuple(sizes), layers, normalizer)

    @property
    def n_params(self):
        return int(np.sum([a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:])]))

    def __call__(self, *columns):
        if self.normalizer is None:
            raise NotFittedError("MLP input normalizer has not been fitted")
        m, s = self.normalizer.mean, self.normalizer.scale
        h = ad.stack([(c - m[k]) / s[k] for k, c in enumerate(columns)], axis=-1)
        for i, (W, b) in enumerate(self.layers):
            h = h @ W + b
            if i < len(self.layers) - 1:
                h = ad.relu(h)
        return h[..., 0]

    def get_vector(self):
        parts = []
        for W, b in self.layers:
            parts += [np.ravel(ad.value_of(W)), np.ravel(ad.value_of(b))]
        return np.concatenate(parts)

    def with_vector(self, z):
        layers, at = [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = z[at:at + a * b].reshape(a, b)
            at += a * b
            layers.append((W, z[at:at + b]))
            at += b
        if at != len(z):
            raise ValueError(f"expected {at} parameters, got {len(z)}")
        return replace(self, layers=layers)


@dataclass(frozen=True)
class MlpModel(ActuatorModel):
    """Stateless neural torque model on [q_des, q, qdot]."""

    net: Mlp = field(default_factory=lambda: Mlp.init((3, 32, 32, 1)))
    kind = "mlp"

    def torque(self, q_des, q, qdot, index=None):
        return self.net(q_des, q, qdot)

    def get_vector(self):
        return self.net.get_vector()

    def with_vector(self, z):
        return replace(self, net=self.net.with_vector(z))


@dataclass(frozen=True)
class ResidualModel(ActuatorModel):
    """Command-space correction: a network shifts q_des before a fixed PD."""

    net: Mlp = field(default_factory=lambda: Mlp.init((3, 32, 32, 1)))
    kp: float = RESIDUAL_KP
    kv: float = RESIDUAL_KV
    kind = "residual"

    def correction(self, q_des, q, qdot):
        return self.net(q_des, q, qdot)

    def torque(self, q_des, q, qdot, index=None):
        return pd_torque(q_des + self.correction(q_des, q, qdot), q, qdot, self.kp, self.kv)

    def get_vector(self):
        return self.net.get_vector()

    def with_vector(self, z):
        return replace(self, net=self.net.with_vector(z))


# -- free torque sequence ----------------------------------------------------

@dataclass(frozen=True)
class TorqueSequenceModel(ActuatorModel):
    """One free torque per timestep, looked up by absolute step index.

    ``horizon`` records the segment length the sequence was fitted with.
    """

    tau: object = field(default_factory=lambda: np.zeros(0))
    horizon: int = 3
    kind = "torque_sequence"

    def torque(self, q_des, q, qdot, index=None):
        return oracle_torque(index, self.tau)

    def get_vector(self):
        return np.asarray(ad.value_of(self.tau), dtype=float).copy()

    def with_vector(self, z):
        return replace(self, tau=z)

    @property
    def max_steps(self) -> int:
        """Rollouts driven by this sequence cannot run longer than this."""
        return len(self.tau)


def oracle_torque(step_index, tau):
    n = len(tau)
    idx = np.asarray(step_index)
    if idx.dtype.kind not in "iu" or np.any(idx < 0) or np.any(idx >= n):
        raise IndexError(f"step index {step_index} outside torque sequence of length {n}")
    return tau[idx] if ad.is_var(tau) else np.asarray(tau, dtype=float)[idx]


# -- test-stand baseline -----------------------------------------------------

@dataclass(frozen=True)
class PwmPdParams:
    Kp: float = 1.228
    Kd: float = 0.092

    def __post_init__(self):
        if self.Kp < 0 or self.Kd < 0:
            raise ValueError("PWM gains must be non-negative")


def bench_torque(q_des, q, qdot, pwm: PwmPdParams, net: Mlp):
    if net is None or net.normalizer is None:
        raise NotFittedError("bench map has not been trained")
    return net(pwm_duty(q_des, q, qdot, pwm.Kp, pwm.Kd), qdot)


@dataclass(frozen=True)
class BenchSupModel(ActuatorModel):
    """PWM PD law feeding a steady-state (duty, velocity) -> torque map."""

    pwm: PwmPdParams = field(default_factory=PwmPdParams)
    net: Mlp = field(default_factory=lambda: Mlp.init((2, 128, 64, 1)))
    kind = "bench"

    def torque(self, q_des, q, qdot, index=None):
        return bench_torque(q_des, q, qdot, self.pwm, self.net)

    def get_vector(self):
        return self.net.get_vector()

    def with_vector(self, z):
        return replace(self, net=self.net.with_vector(z))


# -- hidden servo used to synthesize data -----------------------------------

@dataclass(frozen=True)
class ServoModel(ActuatorModel):
    """Ground-truth stand-in for the physical servo.

    PWM position loop, then a linear motor map ``stall * u - emf * qdot``,
    then a first-order torque lag with time constant ``lag``. Without lag and
    away from duty saturation this is exactly a PD law with
    ``kp = stall * Kp`` and ``kv = stall * Kd + emf``.
    """

    Kp: float = 1.228
    Kd: float = 0.092
    stall: float = 3.0
    emf: float = 0.276
    armature: float = 0.00321
    lag: float = 0.0
    dt: float = 0.002
    kind = "servo"

    @classmethod
    def from_pd(cls, kp, kv, armature, stall=np.inf, emf_fraction=0.5, lag=0.0, dt=0.002):
        emf = emf_fraction * kv
        if np.isinf(stall):
            return cls(Kp=kp, Kd=kv - emf, stall=np.inf, emf=emf, armature=armature,
                       lag=lag, dt=dt)
        return cls(Kp=kp / stall, Kd=(kv - emf) / stall, stall=stall, emf=emf,
                   armature=armature, lag=lag, dt=dt)

    @property
    def pwm(self) -> PwmPdParams:
        return PwmPdParams(self.Kp, self.Kd)

    def steady_torque(self, u, qdot):
        return self.stall * np.asarray(u) - self.emf * np.asarray(qdot)

    def target_torque(self, q_des, q, qdot):
        if np.isinf(self.stall):
            return pd_torque(q_des, q, qdot, self.Kp, self.Kd) - self.emf * qdot
        return self.steady_torque(pwm_duty(q_des, q, qdot, self.Kp, self.Kd), qdot)

    def plant_for(self, plant):
        return plant.with_overrides(armature=self.armature)

    def start(self):
        return _ServoState(self)

    def torque(self, q_des, q, qdot, index=None):
        return self.target_torque(q_des, q, qdot)

    def get_vector(self):
        return np.array([self.Kp, self.Kd, self.stall, self.emf, self.armature, self.lag])

    def with_vector(self, z):
        return replace(self, **dict(zip(("Kp", "Kd", "stall", "emf", "armature", "lag"), z)))


class _ServoState:
    def __init__(self, servo: ServoModel):
        self.servo = servo
        self.tau = None

    def torque(self, q_des, q, qdot, index=None):
        target = self.servo.target_torque(q_des, q, qdot)
        if self.servo.lag <= 0:
            return target
        if self.tau is None:
            self.tau = target
        else:
            alpha = self.servo.dt / (self.servo.lag + self.servo.dt)
            self.tau = self.tau + alpha * (target - self.tau)
        return self.tau


MODEL_KINDS = {cls.kind: cls for cls in
               (PdModel, MlpModel, ResidualModel, TorqueSequenceModel, BenchSupModel, ServoModel)}
