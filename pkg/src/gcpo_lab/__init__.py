"""Toy-scale guidance contrastive policy optimization and its group-advantage baselines."""

from gcpo_lab.numerics import InvalidInputError

__version__ = "0.1.0"

__all__ = ["InvalidInputError", "__version__"]
