"""Maximum-entropy exploration with conditional visitation measures on gridworlds."""

__version__ = "0.1.0"
