"""Single-joint rod plant and its fixed-step integrator.

Angles are measured from the hanging-down equilibrium. All functions accept
floats, numpy arrays (a batch of independent joints) or autodiff ``Var``
nodes interchangeably.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import autodiff as ad

ROD_MASS = 0.24
ROD_LENGTH = 0.352


class RolloutDivergence(FloatingPointError):
    """A rollout produced a non-finite state."""

    def __init__(self, step_index: int, message: str = ""):
        self.step_index = step_index
        super().__init__(message or f"rollout diverged at step {step_index}")


class JointState(NamedTuple):
    q: object
    qdot: object


@dataclass(frozen=True)
class PlantParams:
    """Rigid rod on a revolute joint plus MuJoCo-style joint terms.

    The defaults model a uniform slender bar pivoted at one end, so the
    pivot inertia is m L^2 / 3 and the center of mass sits at L / 2.
    """

    rod_mass: float = ROD_MASS
    rod_length: float = ROD_LENGTH
    rod_com_distance: float = ROD_LENGTH / 2
    rod_inertia: float = ROD_MASS * ROD_LENGTH**2 / 3
    armature: float = 0.0
    damping: float = 0.0
    frictionloss: float = 0.0
    gravity: float = 9.81
    friction_smoothing: float = 1e-3

    def validate(self):
        checks = {
            "rod_mass": self.rod_mass > 0,
            "rod_length": self.rod_length > 0,
            "rod_inertia": self.rod_inertia > 0,
            "armature": ad.value_of(self.armature) >= 0,
            "damping": ad.value_of(self.damping) >= 0,
            "frictionloss": ad.value_of(self.frictionloss) >= 0,
            "friction_smoothing": self.friction_smoothing > 0,
        }
        bad = [name for name, ok in checks.items() if not np.all(ok)]
        if bad:
            raise ValueError(f"invalid plant parameters: {', '.join(bad)}")
        return self

    def with_overrides(self, **overrides) -> "PlantParams":
        return replace(self, **overrides) if overrides else self


@dataclass(frozen=True)
class StepConfig:
    dt: float = 0.002

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")


def gravity_torque(q, plant: PlantParams):
    return -plant.rod_mass * plant.gravity * plant.rod_com_distance * ad.sin(q)


def smooth_sign(v, smoothing: float):
    return ad.tanh(v / smoothing)


def acceleration(state: JointState, applied_torque, plant: PlantParams):
    q, qdot = state
    torque = applied_torque + gravity_torque(q, plant) - plant.damping * qdot
    if ad.is_var(plant.frictionloss) or plant.frictionloss != 0:
        torque = torque - plant.frictionloss * smooth_sign(qdot, plant.friction_smoothing)
    return torque / (plant.rod_inertia + plant.armature)


def step(state: JointState, applied_torque, plant: PlantParams,
         cfg: StepConfig = StepConfig()) -> JointState:
    """Semi-implicit Euler: velocity first, then position with the new velocity."""
    qddot = acceleration(state, applied_torque, plant)
    qdot = state.qdot + cfg.dt * qddot
    q = state.q + cfg.dt * qdot
    return JointState(q, qdot)


def mechanical_energy(state: JointState, plant: PlantParams):
    """Kinetic plus gravitational potential energy (zero at hanging rest)."""
    q, qdot = (np.asarray(ad.value_of(x)) for x in state)
    inertia = plant.rod_inertia + ad.value_of(plant.armature)
    return (0.5 * inertia * qdot**2
            + plant.rod_mass * plant.gravity * plant.rod_com_distance * (1 - np.cos(q)))


def _check_finite(state: JointState, i: int):
    if not (np.all(np.isfinite(ad.value_of(state.q)))
            and np.all(np.isfinite(ad.value_of(state.qdot)))):
        raise RolloutDivergence(i)


def rollout(initial: JointState, commands, model, plant: PlantParams,
            cfg: StepConfig = StepConfig(), start_index=0) -> list[JointState]:
    """Roll ``model`` forward from ``initial`` under ``commands``.

    ``commands`` has shape ``(H,)`` or ``(H, B)`` for a batch of B segments.
    ``start_index`` is the absolute timestep of the first command (scalar or
    per-segment array); it only matters for time-indexed models such as a
    fitted torque sequence. Returns the H successor states; the initial state
    is not included.

    ``model`` is any actuator model exposing ``plant_for(plant)`` and
    ``start()``; ``start()`` returns a per-rollout controller whose
    ``torque(q_des, q, qdot, index)`` gives the joint torque.
    """
    commands = np.asarray(commands, dtype=float)
    if len(commands) == 0:
        raise ValueError("commands must be non-empty")
    _check_finite(initial, -1)
    plant = model.plant_for(plant)
    ctrl = model.start()
    state = initial
    states = []
    for i, q_des in enumerate(commands):
        tau = ctrl.torque(q_des, state.q, state.qdot, start_index + i)
        state = step(state, tau, plant, cfg)
        _check_finite(state, i)
        states.append(state)
    return states


def stack_states(states: list[JointState]) -> tuple[np.ndarray, np.ndarray]:
    """Numeric (q, qdot) arrays of shape ``(H, ...)`` from a rollout."""
    q = np.array([ad.value_of(s.q) for s in states], dtype=float)
    qdot = np.array([ad.value_of(s.qdot) for s in states], dtype=float)
    return q, qdot


__all__ = [
    "JointState", "PlantParams", "StepConfig", "RolloutDivergence",
    "gravity_torque", "smooth_sign", "acceleration", "step", "rollout",
    "mechanical_energy", "stack_states",
]
