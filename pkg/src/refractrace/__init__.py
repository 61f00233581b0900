"""Joint reconstruction of a refractive water surface and the scene beneath it with ray-traced Gaussians."""

__version__ = "0.1.0"
