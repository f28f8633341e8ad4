"""STAR-RIS assisted V2X resource allocation laboratory."""

from .params import SimParams, default_params

__all__ = ["SimParams", "default_params"]
__version__ = "0.1.0"
