"""burnseg: burned-area delineation from 4-band post-wildfire imagery.

A library-first toolkit covering the full workflow: raster preparation
(clipping, rasterization, cloud subtraction, nearest-neighbor land-cover
resampling), patch tiling and overlap-averaged mosaicking, spatially
independent block splits, single- and multi-task encoder-decoder training
with optional mixed precision, dihedral test-time augmentation, and
Dice/IoU/latency reporting. A thin CLI chains the stages from one config
file; see the demos directory for narrative usage.
"""

__version__ = "0.1.0"
