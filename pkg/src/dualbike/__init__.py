"""Dual-policy reinforcement learning for dynamic bike-share rebalancing."""

__version__ = "0.1.0"
