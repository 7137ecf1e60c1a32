"""Content-addressable block store with a batch hashing offload pipeline."""

__version__ = "0.1.0"
