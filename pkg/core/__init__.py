"""Tensor storage and the exception hierarchy shared by every engine."""
