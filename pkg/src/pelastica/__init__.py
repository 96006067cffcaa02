"""Minimising-movement simulation of the p-elastic flow of closed curves."""

from .energy import EnergyParams, discrete_gradient, energy, first_variation
from .flow import FlowConfig, Trajectory, interpolate, run_flow
from .geometry import ClosedCurve, read_curve, resample_arclength, write_curve
from .graph import NormalGraph, decompose, make_reference
from .mollify import QuasiTangent, quasi_tangent

__all__ = [
    "ClosedCurve",
    "EnergyParams",
    "FlowConfig",
    "NormalGraph",
    "QuasiTangent",
    "Trajectory",
    "decompose",
    "discrete_gradient",
    "energy",
    "first_variation",
    "interpolate",
    "make_reference",
    "quasi_tangent",
    "read_curve",
    "resample_arclength",
    "run_flow",
    "write_curve",
]
