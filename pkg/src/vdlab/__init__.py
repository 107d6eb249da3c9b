"""Singing voice detection lab: three detectors, stress-test generators, evaluation."""

__version__ = "0.1.0"
