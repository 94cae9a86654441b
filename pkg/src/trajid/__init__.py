"""Actuator identification by matching simulated to measured joint trajectories.

Modules: ``dynamics`` (pendulum plant and rollout), ``autodiff`` (reverse-mode
tape), ``actuators`` (torque models), ``excitation`` (commands and synthetic
datasets), ``identification`` (segmented loss, Adam, CMA-ES, supervised stand
fit), ``evaluation`` (held-out MAE and studies), ``estimators``
(scikit-learn style wrappers) and ``cli``.
"""

from .dynamics import JointState, PlantParams, StepConfig, rollout
from .estimators import (BenchSup, NNES, ParamES, TorqueOracle, TrajIDNN, TrajIDParam,
                         TrajIDResidual)
from .evaluation import EvalConfig, eval_mae
from .excitation import ExcitationSpec, HiddenModelSpec, default_datasets, generate_dataset
from .trajectory import Trajectory

__version__ = "0.1.0"

__all__ = ["JointState", "PlantParams", "StepConfig", "rollout", "Trajectory",
           "ExcitationSpec", "HiddenModelSpec", "generate_dataset", "default_datasets",
           "TrajIDParam", "TrajIDNN", "TrajIDResidual", "ParamES", "NNES", "TorqueOracle",
           "BenchSup", "EvalConfig", "eval_mae"]
