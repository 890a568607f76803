"""Discretization-bias toolkit for linear-Gaussian state-space models."""
