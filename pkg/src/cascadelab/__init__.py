"""cascade-lab: pseudo-spectral turbulence laboratory on the periodic torus.

Simulates 2D/3D incompressible flow, diagnoses the coarse-grained energy
cascade (subfilter stress, flux through scale, resolved budgets), and
measures the forward/backward asymmetry of short-time tracer-pair
dispersion against the cascade anomalies it reflects.
"""

from .grid import Grid, forward_transform, inverse_transform
from .filters import FilterKernel, flux_pi, mollify, subfilter_stress
from .solver import FlowState, ForcingSpec, step

__all__ = [
    "Grid",
    "forward_transform",
    "inverse_transform",
    "FilterKernel",
    "mollify",
    "subfilter_stress",
    "flux_pi",
    "FlowState",
    "ForcingSpec",
    "step",
]

__version__ = "0.1.0"
