"""Learning to rank from ordered subsequences."""

__version__ = "0.1.0"
