"""Tabular KL-entropy regularized value iteration with bounded advantage terms."""

__version__ = "0.1.0"
