"""Closed-loop joint-axis estimation for articulated-object manipulation.

Radius-filtered point clouds, minimum-area oriented boxes, OBB-based
prismatic/revolute axis estimates, a deterministic cabinet simulator and a
perception-action controller that refines the axis after every step.
"""

__version__ = "0.1.0"
