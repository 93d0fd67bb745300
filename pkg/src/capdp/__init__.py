"""Capacities, fatness and Hardy-type inequalities for double-phase energies on grids."""

__version__ = "0.1.0"
