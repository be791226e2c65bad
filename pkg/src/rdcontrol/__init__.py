"""Localized null controls for mass-action reaction-diffusion systems on an interval."""
__version__ = "0.1.0"

from .cascade import CascadeTransform, from_z, make_transform, to_z
from .errors import RDControlError
from .reaction import ReactionNetwork
from .spectral import ControlSignal, SpectralDomain, Trajectory

__all__ = ["CascadeTransform", "ControlSignal", "RDControlError", "ReactionNetwork", "SpectralDomain",
           "Trajectory", "from_z", "make_transform", "to_z", "__version__"]
