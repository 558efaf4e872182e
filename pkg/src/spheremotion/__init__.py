"""Simulation and model predictive control of a pendulum-driven spherical robot."""

from .controllers import (CascadedPID, ESOMPCVelocityController, OrientationMPCConfig, Phase, PhaseScheduler,
                          PWMPCOrientationController, VelocityMPCConfig, roll_pid, speed_pid)
from .dynamics import FrictionConfig, GeneralizedState, RobotParams, plant_step
from .harness import Scenario, compute_metrics, export_results, run_scenario
from .linmodel import LinearModel, linearize
from .mlp import MLPParams, lm_train, train_beta_model
from .qp import MPCConfig, QPProblem, solve_qp

__version__ = "0.1.0"

__all__ = [
    "CascadedPID", "ESOMPCVelocityController", "OrientationMPCConfig", "Phase", "PhaseScheduler",
    "PWMPCOrientationController", "VelocityMPCConfig", "roll_pid", "speed_pid",
    "FrictionConfig", "GeneralizedState", "RobotParams", "plant_step",
    "Scenario", "compute_metrics", "export_results", "run_scenario",
    "LinearModel", "linearize", "MLPParams", "lm_train", "train_beta_model",
    "MPCConfig", "QPProblem", "solve_qp",
]
