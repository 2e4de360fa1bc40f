"""Multiscale graphical lasso."""
