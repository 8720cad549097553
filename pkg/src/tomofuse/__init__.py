"""Variable-depth slice-stack classification with 2D feature extractors."""

__version__ = "0.1.0"
