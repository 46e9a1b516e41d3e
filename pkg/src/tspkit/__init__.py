"""Detail refining decoder, segmentation metrics and traffic-scene statistics."""

__version__ = "0.1.0"
