"""Intermediate-level transfer attacks on small classifiers, from scratch on numpy."""

__version__ = "0.1.0"
