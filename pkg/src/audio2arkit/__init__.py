"""Audio-to-ARKit mouth coefficient pipeline: unit construction, generation, smoothing, metrics."""

__version__ = "0.1.0"
