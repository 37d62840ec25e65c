"""Outer design-space search: prescreen, Bayesian optimization, CMA-ES, campaigns."""
