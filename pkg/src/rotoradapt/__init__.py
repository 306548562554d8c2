"""Meta-learned adaptive trajectory tracking for a planar rotorcraft under wind."""

__version__ = "0.1.0"
