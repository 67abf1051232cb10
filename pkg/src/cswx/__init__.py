"""Grammar-aware edit distance and crossover for derivation trees."""

__version__ = "0.1.0"
