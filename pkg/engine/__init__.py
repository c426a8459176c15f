"""Numerical engines for multilinear low-rank tensors on graphs."""
