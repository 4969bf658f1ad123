"""Two-weight bounds for sparse operators on finite dyadic models."""
__version__ = "0.1.0"
