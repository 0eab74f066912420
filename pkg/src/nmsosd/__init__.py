"""Neural min-sum decoding with ordered-statistics post-processing."""

__version__ = "0.1.0"
