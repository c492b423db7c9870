"""Frank-Wolfe policy optimization for action-constrained reinforcement learning."""

__version__ = "0.1.0"
