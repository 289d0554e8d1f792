"""Inferring quantum network topologies from measured correlations."""

__version__ = "0.1.0"
