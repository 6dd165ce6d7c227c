"""driveflow: a desk-scale driving planner combining a flow-matching
trajectory expert (sparse cross-attention over encoder caches, historical
initialization) with a token-based reasoning head, trained by two-stage
supervision and group-relative policy optimization, and scored with the
PDMS/EPDMS driving metrics on a synthetic 2-D micro-world."""

__version__ = "0.1.0"
