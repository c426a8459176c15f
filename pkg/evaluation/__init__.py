"""Quantitative evaluation measures for recovered tensors and subspaces."""
