"""Simulation and analysis of stochastic fast-slow systems with folded nodes."""
__version__ = "0.1.0"
