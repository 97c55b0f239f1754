"""Membership-inference attacks, output-noise defenses and privacy/utility metrics."""

__version__ = "0.1.0"
