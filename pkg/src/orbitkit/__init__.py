"""Orbits of vector-field families and intertwining maps.

Symbolic fields and brackets, numerical flows with variational Jacobians,
orbit dimension, distinguished charts, orbit sampling, and local
trivializations of maps carrying one family onto another.

Set ``ORBITKIT_DISABLE_NUMBA=1`` before import to run the kernels as plain
Python/numpy.
"""
from __future__ import annotations

__version__ = "0.1.0"

from ._jit import NUMBA_ENABLED
from .expr import Expr, differentiate, evaluate, parse, simplify, to_text
from .fields import Family, VectorField, adjoint_transport, bracket_closure, lie_bracket, related_check
from .flow import FlowOptions, FlowWord, Incomplete, flow, flow_with_jacobian, flow_word, inverse_word
from .geometry import Space, contains, retract, tangent_project
from .intertwine import (
    MappedSystem,
    SmoothMap,
    Trivialization,
    TrivializationError,
    build_trivialization,
    check_intertwine,
    fiber_coordinate,
    lift_word,
    rank_along_orbit,
    sample_fiber,
    verify_trivialization,
)
from .orbit import DistinguishedChart, chart_point, distinguished_chart, orbit_dimension, sample_orbit

__all__ = [
    "NUMBA_ENABLED",
    "DistinguishedChart",
    "Expr",
    "Family",
    "FlowOptions",
    "FlowWord",
    "Incomplete",
    "MappedSystem",
    "SmoothMap",
    "Space",
    "Trivialization",
    "TrivializationError",
    "VectorField",
    "adjoint_transport",
    "bracket_closure",
    "build_trivialization",
    "chart_point",
    "check_intertwine",
    "contains",
    "differentiate",
    "distinguished_chart",
    "evaluate",
    "fiber_coordinate",
    "flow",
    "flow_with_jacobian",
    "flow_word",
    "inverse_word",
    "lie_bracket",
    "lift_word",
    "orbit_dimension",
    "parse",
    "rank_along_orbit",
    "related_check",
    "retract",
    "sample_fiber",
    "sample_orbit",
    "simplify",
    "tangent_project",
    "to_text",
    "verify_trivialization",
]
