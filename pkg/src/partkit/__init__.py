"""Part-level concept learning and composition for text-to-image diffusion."""

__version__ = "0.1.0"
