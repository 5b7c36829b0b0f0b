"""Fleet selection for drive-by sensing: strata, coverage, colocations and greedy selection."""

__version__ = "0.1.0"
