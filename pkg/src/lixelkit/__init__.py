"""lixelkit: differentiable 1D-heatmap codecs, mesh-geometry losses,
camera recovery, and a desk-scale pose-to-mesh cascade."""

from . import camera, diffcore, experiments, heatmap, meshgeom, network

__version__ = "0.1.0"

__all__ = ["camera", "diffcore", "experiments", "heatmap", "meshgeom", "network",
           "__version__"]
