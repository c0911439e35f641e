"""Session-based recommendation with review-refined inter-item graphs."""

__version__ = "0.1.0"
