"""Numerical lab for ergodic repeated-interaction quantum processes."""

from .channel import ChannelSpec, KrausChannel, build, compose, mean_channel, transfer_matrix, validate
from .driver import FiniteCycleDriver, IIDDriver, MarkovDriver, Trajectory, sample_trajectory, shift_field
from .eris import Eris, MonteCarloResult, cesaro_exact, cesaro_monte_carlo
from .errors import ConvergenceError, DimensionMismatch, ErisError, InvalidInput
from .fields import RandomField
from .matcore import DEFAULT_TOL, ToleranceProfile
from .structure import (
    Decomposition,
    FixedSpaceBasis,
    corner_fixed_space,
    ergodic_average_observable,
    fixed_space,
    iid_deterministic_decomposition,
    is_minimal,
    is_reducing,
    is_reducing_dual,
    minimal_decomposition,
    peel,
    recurrent_projection,
    schaefer_test,
    stationary_state,
)

__version__ = "0.1.0"
