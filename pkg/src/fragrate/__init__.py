"""Rate functions, scale functions and exact simulation for conservative
homogeneous fragmentations."""

from .dislocation import (BetaBinary, DislocationModel, SpineJumpLaw, TableBinary, UniformBinary, kappa,
                          kappa_derivatives, levy_tail, p_lower, sample_split, sample_spine_jump)
from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
