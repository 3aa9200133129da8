"""Kinetic wealth exchange, the Gini gradient flow and its biharmonic metric."""

from __future__ import annotations

from .abm import AgentEnsemble, SimConfig, empirical_gini
from .abm import run as run_abm
from .gini import frechet_gini, gini_coefficient, scaled_gini
from .grid import DensityField, Grid, integrate
from .kernels import diffusion_coefficient, get_kernel, yard_sale_kernel
from .metric import MetricWeight, dual_norm, solve_weighted_biharmonic
from .pde import SchemeConfig, solve

__version__ = "0.1.0"

__all__ = [
    "AgentEnsemble",
    "DensityField",
    "Grid",
    "MetricWeight",
    "SchemeConfig",
    "SimConfig",
    "diffusion_coefficient",
    "dual_norm",
    "empirical_gini",
    "frechet_gini",
    "get_kernel",
    "gini_coefficient",
    "integrate",
    "run_abm",
    "scaled_gini",
    "solve",
    "solve_weighted_biharmonic",
    "yard_sale_kernel",
]
