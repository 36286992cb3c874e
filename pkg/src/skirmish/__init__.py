"""Desk-scale tactical shooter simulation with rule-enhanced reinforcement learning."""

__version__ = "0.1.0"
