"""Differential dynamic programming over rigid-contact KKT dynamics for planar robots."""
from .contact_dynamics import (
    ContactDegeneracyError,
    DynamicsDerivatives,
    KktSolution,
    ModelDegeneracyError,
    derivatives,
    kkt_solve,
    step,
)
from .ddp import SolverSettings, SolveTrace, rollout, solve
from .model import ContactPoint, KinematicTree, Link, State, builtin_model, load_model

__version__ = "0.1.0"

__all__ = [
    "ContactDegeneracyError",
    "ContactPoint",
    "DynamicsDerivatives",
    "KinematicTree",
    "KktSolution",
    "Link",
    "ModelDegeneracyError",
    "SolveTrace",
    "SolverSettings",
    "State",
    "builtin_model",
    "derivatives",
    "kkt_solve",
    "load_model",
    "rollout",
    "solve",
    "step",
]
