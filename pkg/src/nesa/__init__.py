"""Calendar-aware scheduling suggestions from learned event patterns."""

__version__ = "0.1.0"
