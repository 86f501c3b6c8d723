"""Oracle-complexity lower-bound testbed for second-order finite-sum methods."""

__version__ = "0.1.0"
