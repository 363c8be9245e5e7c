"""Scaled-graph analysis and synthesis of time-regularized reset controllers."""

__version__ = "0.1.0"

from .linsys import StateSpace, TransferFunction, hinf_norm, real_spectrum_interval  # noqa: E402
from .resetsim import ResetSystem, simulate_closed_loop, simulate_reset  # noqa: E402
from .sdpcore import kyp_solve  # noqa: E402
from .sgregions import CircleConstraint, RegionApprox, patch_overapprox, sg_overapprox  # noqa: E402

__all__ = [
    "CircleConstraint",
    "RegionApprox",
    "ResetSystem",
    "StateSpace",
    "TransferFunction",
    "hinf_norm",
    "kyp_solve",
    "patch_overapprox",
    "real_spectrum_interval",
    "sg_overapprox",
    "simulate_closed_loop",
    "simulate_reset",
]
