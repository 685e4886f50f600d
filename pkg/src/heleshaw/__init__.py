"""Lagrangian minimizing-movement solver for the one-dimensional thin-film equation.

The density is transported by a monotone map sampled on a mass grid; each
implicit Euler step minimizes the Yosida-regularized Dirichlet energy, so
mass and positivity hold by construction.  A standard finite-difference
scheme is included as an independent reference.
"""
__version__ = "0.1.0"
