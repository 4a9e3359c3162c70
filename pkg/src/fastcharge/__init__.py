"""Degradation-aware fast charging: SPMe plant, thermal model and charging controllers."""

from .errors import (FastChargeError, IntegratorError, OcpRangeError, ParameterError,
                     SaturationError, StateBoundsError)
from .params import CellParameters, default_parameters, load_parameters, save_parameters
from .plant import AgeingSpec, CellState, ControlInput, Plant, apply_ageing, initialize

__version__ = "0.1.0"
