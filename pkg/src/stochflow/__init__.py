"""Numerical laboratory for singular-drift stochastic flows, their Kolmogorov
equations and the stochastic Lagrangian form of Navier–Stokes."""

__version__ = "0.1.0"
