"""Map-grounded geospatial question answering: synthetic worlds, rendering, and a small transformer."""

__version__ = "0.1.0"
