"""Symplectic multirate GARK integrators for partitioned Hamiltonian systems."""
__version__ = "0.1.0"
