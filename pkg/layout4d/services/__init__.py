"""Geometry, simulation, warping, registration and evaluation services."""
