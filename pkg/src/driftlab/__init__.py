"""Streaming concept-drift analytics: detection via cluster-weighted energy
distance over an incremental Gaussian mixture, explanation via constrained
2-D projection and density-diff grids, correction via a dynamically
weighted ensemble."""

__version__ = "0.1.0"
