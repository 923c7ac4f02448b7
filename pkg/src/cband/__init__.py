"""CBAND: no-reference banding quality from NSS statistics of early CNN activations."""

__version__ = "0.1.0"
