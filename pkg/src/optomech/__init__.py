"""Simulator for a two-cavity optomechanical network with driven three-level atoms.

Truncated-Fock master-equation toolkit covering quantum state transfer
between the cavities, entanglement dynamics, and steady-state squeezing
synchronization mediated by the shared mechanical mode.
"""

from . import dynamics, hilbert, measures, model, runner, scenario
from .errors import (
    ConfigError,
    ConvergenceError,
    IntegratorAccuracyError,
    ModelRegimeError,
    NumericValidityError,
    OptomechError,
    SpaceMismatchError,
    SpaceShapeError,
    TruncationTooSmallError,
    WrongKindError,
)

__version__ = "0.1.0"
