"""tracksim: rigid-body simulation of tracked vehicles with surface-motion
friction constraints, comparison vehicle models, benchmark scenarios and
parameter search."""

__version__ = "0.1.0"
