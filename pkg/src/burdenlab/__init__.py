"""Desk-scale testbed for distillation of constraint-coupled recurrent teachers."""

from .dynamics import CellParams, ConstraintConfig, DeployedModel, TrajectoryRecord, rollout
from .numgrad import Graph, grad_check
from .tasks import SequenceTask, generate

__version__ = "0.1.0"

__all__ = [
    "CellParams",
    "ConstraintConfig",
    "DeployedModel",
    "Graph",
    "SequenceTask",
    "TrajectoryRecord",
    "generate",
    "grad_check",
    "rollout",
]
