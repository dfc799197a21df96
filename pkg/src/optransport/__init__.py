"""Adiabatic transport of the reduced density matrix of a weakly coupled bipartite quantum system."""

__version__ = "0.1.0"
