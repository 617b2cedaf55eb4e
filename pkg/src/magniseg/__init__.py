"""Self-supervised nuclei segmentation via magnification classification."""

__version__ = "0.1.0"
