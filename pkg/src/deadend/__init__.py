"""Benchmark suite for escaping narrow dead-ends with a car-like robot."""

__version__ = "0.1.0"
