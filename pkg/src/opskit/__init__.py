"""Toolkit for optimal power shutoff studies.

Builds network-flow, DC and second-order-cone relaxations of the shutoff
problem, solves them with an embedded branch-and-cut solver, recovers
AC-feasible operating points for the resulting de-energization decisions,
and benchmarks the formulations against each other.
"""

__version__ = "0.1.0"
