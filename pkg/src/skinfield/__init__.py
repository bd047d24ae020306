"""skinfield: canonical-space human radiance field driven by skeletal skinning.

A desk-scale, CPU-only pipeline: rigged body model + linear blend skinning
volume deformation, an image-conditioned canonical radiance field, volumetric
rendering, training with color/mask/smoothness/shape losses, proxy mesh
extraction, and masked image metrics.
"""

__version__ = "0.1.0"
