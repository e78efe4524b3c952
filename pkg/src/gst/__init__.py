"""Group-sparse training: block-circulant grouping, pruning schedules and compression accounting."""

__version__ = "0.1.0"
