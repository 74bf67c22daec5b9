"""Mechanism-space forecasting for Burgers and Lorenz96 at desk scale."""

__version__ = "0.1.0"
