"""Reward-poisoning attacks on federated reinforcement learning, with a defense
and a numerical check of the single-round decrease guarantee."""

__version__ = "0.1.0"
