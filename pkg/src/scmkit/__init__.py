"""Simulation and analysis tools for a scanning photonic-crystal-cavity microscope
coupled to a single NV center."""

__version__ = "0.1.0"

from . import dynamics, model, qstats, scanfield, spectro  # noqa: E402,F401
from .errors import InputError, NumericalError, ScmError  # noqa: E402,F401
