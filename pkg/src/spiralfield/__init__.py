"""Square-spiral crop-field layouts, rule-constrained route planning and robot simulation."""

__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    FieldLayout,
    LinearSpec,
    Segment,
    SpiralSpec,
    build_linear,
    build_spiral,
    coverage_stats,
    to_1d,
    to_2d,
)
from .field_graph import FieldGraph, a_star, build_graph, rules_distance, snap  # noqa: E402
from .planner import Tour, plan_tour, snap_targets  # noqa: E402

__all__ = [
    "FieldGraph",
    "FieldLayout",
    "LinearSpec",
    "Segment",
    "SpiralSpec",
    "Tour",
    "a_star",
    "build_graph",
    "build_linear",
    "build_spiral",
    "coverage_stats",
    "plan_tour",
    "rules_distance",
    "snap",
    "snap_targets",
    "to_1d",
    "to_2d",
]
