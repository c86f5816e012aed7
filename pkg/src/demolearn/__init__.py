"""Learning personalized policies from heterogeneous scheduling demonstrations."""

__version__ = "0.1.0"
