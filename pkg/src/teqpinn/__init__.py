"""Physics-informed solvers for the heat equation with quantum-circuit and classical models."""

__version__ = "0.1.0"
