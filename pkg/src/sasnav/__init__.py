"""Synthetic aperture sonar simulation and ping-to-ping micronavigation."""
from .errors import (DegenerateIntersection, FormatError, MaxEvaluations, NumericalError, SasError,
                     ShapeMismatch, ValidationError)
from .geometry import IDENTITY, PingGeometry, Pose, SystemConfig, compose, inverse, relative_pose
from .imaging import PingOperator, PingRecord
from .micronav import (EstimationOptions, Truncation, estimate_displacement, estimate_trajectory,
                       eta, zeta)
from .scene import ReflectivityGrid, make_grid, synth_scene

__version__ = "0.1.0"
