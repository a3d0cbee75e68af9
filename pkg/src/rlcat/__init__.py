"""Opportunistic channel-aware vehicle-to-cloud data transfer: simulator, schemes and Q-learning."""

__version__ = "0.1.0"
