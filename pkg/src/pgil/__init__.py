"""Physics guided and injected learning for SAR patch classification."""

__version__ = "0.1.0"
