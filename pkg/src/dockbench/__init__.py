"""Dual-quadrotor midair docking simulator and benchmark harness."""

__version__ = "0.1.0"
