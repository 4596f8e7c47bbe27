"""Two-timescale offloading and service caching simulator for ultra-dense edge networks."""

__version__ = "0.1.0"
