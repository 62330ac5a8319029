"""Wave simulation on metric trees and boundary-data recovery of the cubic coefficient."""

from .graph import (
    Band,
    Edge,
    GraphError,
    GraphPoint,
    MetricGraph,
    Sheaf,
    interval_graph,
    parse_graph,
    parse_graph_file,
    recovery_domain,
    star_graph,
)

__all__ = [
    "Band",
    "Edge",
    "GraphError",
    "GraphPoint",
    "MetricGraph",
    "Sheaf",
    "interval_graph",
    "parse_graph",
    "parse_graph_file",
    "recovery_domain",
    "star_graph",
]

__version__ = "0.1.0"
