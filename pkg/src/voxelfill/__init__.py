"""3D brain-volume inpainting toolkit."""

__version__ = "0.1.0"
