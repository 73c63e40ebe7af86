"""specscan: simulate and reconstruct broadband hyperspectral 3D scans.

The package renders synthetic galvo-swept dispersed-structured-light scan
stacks for a VNIR/SWIR stereo pair, recovers depth by classical stereo on
max-projected sweeps, reconstructs per-camera reflectance cubes by
analysis-by-synthesis, and fuses + sharpens them into one 450-1500 nm cube.
"""

__version__ = "0.1.0"

from .core import (
    Camera,
    CameraRig,
    DepthMap,
    Pinhole,
    ScanStack,
    SpectralCube,
    WavelengthGrid,
    default_scan_angles,
    parallel_rig,
    resample_spectrum,
    rmse,
    spectral_angle,
    swir_grid,
    union_grid,
    vnir_grid,
)
from .forward import (
    Curve,
    GaussianField,
    IlluminantModel,
    SensorModel,
    assemble_system_matrix,
    gaussian_weight,
    hdr_fuse,
    render_intensity_vector,
    render_scan_stack,
)

__all__ = [
    "Camera",
    "CameraRig",
    "Curve",
    "DepthMap",
    "GaussianField",
    "IlluminantModel",
    "Pinhole",
    "ScanStack",
    "SensorModel",
    "SpectralCube",
    "WavelengthGrid",
    "assemble_system_matrix",
    "default_scan_angles",
    "gaussian_weight",
    "hdr_fuse",
    "parallel_rig",
    "render_intensity_vector",
    "render_scan_stack",
    "resample_spectrum",
    "rmse",
    "spectral_angle",
    "swir_grid",
    "union_grid",
    "vnir_grid",
]
