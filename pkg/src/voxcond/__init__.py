"""Ray-cast 3D-semantics conditions and a toy conditional rectified-flow denoiser."""

__version__ = "0.1.0"
