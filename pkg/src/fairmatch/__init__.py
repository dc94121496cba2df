"""Fairness auditing by propensity score matching, and FairMatch threshold repair."""

__version__ = "0.1.0"
