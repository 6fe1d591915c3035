"""Forward models whose discrete p2o / p2q maps feed the inversion."""

from .interface import ForwardModel, solver_invocations
from .factory import create_forward_model

__all__ = ['ForwardModel', 'create_forward_model', 'solver_invocations']
