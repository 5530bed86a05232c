"""Layer-wise deep learning with per-step convergence guarantees.

Incremental one-layer and two-layer update laws with runtime-enforced gain
conditions, the inverse layer-wise and forward progressive training
algorithms built on them, and an online kinematic control loop that learns a
robot Jacobian from task-space feedback error.
"""

from . import (activations, baselines, data, fpl, inverse_layerwise,
               kincontrol, network, numerics, updates)
from .errors import LwdlError

__all__ = ["activations", "baselines", "data", "fpl", "inverse_layerwise",
           "kincontrol", "network", "numerics", "updates", "LwdlError"]

__version__ = "0.1.0"
