"""Variational lower-bound inverse reinforcement learning on desk-scale MDPs."""

__version__ = "0.1.0"
