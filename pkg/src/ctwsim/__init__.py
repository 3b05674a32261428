"""Thermo-elastoplastic simulation of the controlled tensile weldability strip test."""

__version__ = "0.1.0"
