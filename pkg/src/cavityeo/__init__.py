"""Simulation and parameter estimation for pumped multimode cavity electro-optic devices."""

__version__ = "0.1.0"
