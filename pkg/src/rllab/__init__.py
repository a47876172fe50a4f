"""Rescaled Lasso, negative-spike sparse PCA tools and Gaussian graphical model screening."""

from __future__ import annotations

__version__ = "0.1.0"
