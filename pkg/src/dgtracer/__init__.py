"""Conservative and consistent DG tracer transport on slices and cubed spheres."""

__version__ = "0.1.0"
