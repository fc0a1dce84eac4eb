"""Low-dose fan-beam CT reconstruction with a one-sample Hankel-patch diffusion prior."""

__version__ = "0.1.0"
