"""Wasserstein gradient flows in the plane through Laguerre-cell discretisations of convex potentials."""

from .energy import (
    DiscreteMeasure,
    GradientSelection,
    InternalEnergySpec,
    JkoObjective,
    PotentialSpec,
    jko_objective,
    nonconvexity_demo,
)
from .flows import FlowConfig, FlowTrace, crowd_flow, diffusion_flow
from .geom2d import ConvexDomain, ConvexPolygon, HalfPlane
from .laguerre import LaguerreDiagram, build_diagram
from .ma import NotInteriorError, ma, ma_hessian, ma_jacobian
from .solver import SolveOptions, initial_potential, newton_solve

__version__ = "0.1.0"

__all__ = [
    "ConvexDomain",
    "ConvexPolygon",
    "DiscreteMeasure",
    "FlowConfig",
    "FlowTrace",
    "GradientSelection",
    "HalfPlane",
    "InternalEnergySpec",
    "JkoObjective",
    "LaguerreDiagram",
    "NotInteriorError",
    "PotentialSpec",
    "SolveOptions",
    "build_diagram",
    "crowd_flow",
    "diffusion_flow",
    "initial_potential",
    "jko_objective",
    "ma",
    "ma_hessian",
    "ma_jacobian",
    "newton_solve",
    "nonconvexity_demo",
]
