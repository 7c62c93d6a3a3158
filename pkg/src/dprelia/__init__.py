"""Run, account for, and statistically compare differentially private training experiments."""

__version__ = "0.1.0"
