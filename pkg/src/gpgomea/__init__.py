"""GP-GOMEA for symbolic regression of small expressions."""

__version__ = "0.1.0"
