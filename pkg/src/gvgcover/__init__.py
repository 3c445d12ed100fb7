"""GVG-guided multi-robot coverage: geometry, extraction, balancing, control."""

from .geometry import DensityField, Polygon, World, paper_density

__version__ = "0.1.0"

__all__ = [
    "DensityField",
    "Polygon",
    "World",
    "paper_density",
    "__version__",
]
