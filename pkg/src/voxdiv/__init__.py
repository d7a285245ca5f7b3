"""voxdiv: voxel-grid cell shapes, division rules, and a masked 3D UNet."""

__version__ = "0.1.0"
