"""Smooth self-similar imploding profiles for 3-D Euler at gamma = 5/3."""

from .errors import ProfileError, VerificationError
from .params import (
    ParamSet,
    SpecialPoints,
    params_from_r,
    params_from_R,
    params_from_a,
    params_from_alpha,
    params_from_lambda,
    params_from_w_minus,
    special_points,
)

__version__ = "0.1.0"

__all__ = [
    "ProfileError",
    "VerificationError",
    "ParamSet",
    "SpecialPoints",
    "params_from_r",
    "params_from_R",
    "params_from_a",
    "params_from_alpha",
    "params_from_lambda",
    "params_from_w_minus",
    "special_points",
    "__version__",
]
