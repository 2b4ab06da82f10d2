"""Cycle-structured adversarial dehazing on a small numpy autodiff core."""

__version__ = "0.1.0"
