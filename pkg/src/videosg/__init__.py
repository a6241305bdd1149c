"""Scene graph tracking, modeling and evaluation for annotated video."""

__version__ = "0.1.0"
