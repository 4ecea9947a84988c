"""Late points of random walks: potential theory, simulation, statistics."""

__version__ = "0.1.0"
