"""Multi-environment actor-critic training for roundabout insertion.

A 2D longitudinal traffic simulator with semantic occupancy-grid perception,
noise injection for robustness, delayed asynchronous actor-critic training
across several scenarios with validation-based model selection, and a seeded
evaluation harness.
"""

__version__ = "0.1.0"
