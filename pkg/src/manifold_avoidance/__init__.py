"""Collision-avoiding optimal trajectories for multi-agent systems on R^n and S^2."""

__version__ = "0.1.0"
