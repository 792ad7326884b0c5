"""Reference adapter exposing an image classifier over the neo-oracle/1
line protocol."""

from .adapter import AdapterConfig, load_predictor, serve

__version__ = "0.1.0"
__all__ = ["AdapterConfig", "load_predictor", "serve"]
