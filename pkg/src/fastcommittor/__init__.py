"""Kernel committor estimation with learned Mahalanobis scaling."""

__version__ = "0.1.0"
