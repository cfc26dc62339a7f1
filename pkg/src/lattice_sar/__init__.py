"""Two-step adaptive lasso estimation of sparse spatial weights on regular lattices."""

__version__ = "0.1.0"
