"""Face-to-genome matching on surrogate features, and the noise defenses against it."""

__version__ = "0.1.0"
