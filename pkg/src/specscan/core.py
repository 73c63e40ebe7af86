"""Foundational types: wavelength grids, cubes, scan stacks, camera geometry, metrics.

All images are stored row-major with the origin at the top-left corner,
x to the right and y downward.  Cube and stack payloads keep the band
(or scan-angle) axis fastest, i.e. an array of shape (height, width, bands)
in C order.  Radiometric values are linear floating point throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ContractError, DomainError, GridRangeError, ValidationError

WAVELENGTH_MIN_NM = 450.0
WAVELENGTH_MAX_NM = 1500.0
SCAN_ANGLE_LIMIT_DEG = 22.5


class Camera(str, Enum):
    """Which sensor a grid/stack/cube belongs to."""

    VNIR = "VNIR"
    SWIR = "SWIR"
    FUSED = "FUSED"


# ---------------------------------------------------------------------------
# Wavelength grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WavelengthGrid:
    """Strictly increasing band centers (nm) tagged with their camera.

    For merged grids, ``band_sources`` records which camera each band
    originated from; it is None for single-camera grids.
    """

    bands: tuple[float, ...]
    camera: Camera = Camera.VNIR
    band_sources: tuple[Camera, ...] | None = None

    def __post_init__(self):
        bands = tuple(float(b) for b in self.bands)
        object.__setattr__(self, "bands", bands)
        if len(bands) == 0:
            raise ValidationError("wavelength grid needs at least one band")
        arr = np.asarray(bands)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("wavelength grid contains non-finite bands")
        if np.any(np.diff(arr) <= 0):
            raise ValidationError("wavelength grid bands must be strictly increasing")
        if arr[0] < WAVELENGTH_MIN_NM or arr[-1] > WAVELENGTH_MAX_NM:
            raise ValidationError(
                f"bands must lie within [{WAVELENGTH_MIN_NM:.0f}, {WAVELENGTH_MAX_NM:.0f}] nm, "
                f"got [{arr[0]:.1f}, {arr[-1]:.1f}]"
            )
        if self.band_sources is not None and len(self.band_sources) != len(bands):
            raise ValidationError("band_sources length must match bands")

    @property
    def count(self) -> int:
        return len(self.bands)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.bands, dtype=np.float64)

    def band_widths(self) -> np.ndarray:
        """Trapezoidal band widths for discretizing spectral integrals.

        Interior bands get half the distance between their neighbors;
        endpoints get half of the single adjacent gap.  A single-band
        grid has unit width by convention.
        """
        lam = self.array
        if lam.size == 1:
            return np.ones(1)
        w = np.empty_like(lam)
        w[1:-1] = 0.5 * (lam[2:] - lam[:-2])
        w[0] = 0.5 * (lam[1] - lam[0])
        w[-1] = 0.5 * (lam[-1] - lam[-2])
        return w

    def source_of(self, index: int) -> Camera:
        if self.band_sources is not None:
            return self.band_sources[index]
        return self.camera


def vnir_grid() -> WavelengthGrid:
    """Default VNIR reconstruction grid: 450-890 nm at 20 nm spacing (23 bands)."""
    return WavelengthGrid(tuple(np.arange(450.0, 890.0 + 1e-9, 20.0)), Camera.VNIR)


def swir_grid() -> WavelengthGrid:
    """Default SWIR reconstruction grid: 875-1500 nm at 25 nm spacing (26 bands)."""
    return WavelengthGrid(tuple(np.arange(875.0, 1500.0 + 1e-9, 25.0)), Camera.SWIR)


def union_grid(a: WavelengthGrid, b: WavelengthGrid) -> WavelengthGrid:
    """Sorted union of two grids, tracking which camera each band came from."""
    bands: list[float] = []
    sources: list[Camera] = []
    for g in (a, b):
        for lam in g.bands:
            bands.append(lam)
            sources.append(g.camera)
    order = np.argsort(bands)
    out_bands: list[float] = []
    out_sources: list[Camera] = []
    for i in order:
        if out_bands and bands[i] == out_bands[-1]:
            continue
        out_bands.append(bands[i])
        out_sources.append(sources[i])
    return WavelengthGrid(tuple(out_bands), Camera.FUSED, tuple(out_sources))


def default_scan_angles() -> np.ndarray:
    """Default galvo sweep: 181 angles from -22.5 to +22.5 deg in 0.25 deg steps."""
    return np.linspace(-SCAN_ANGLE_LIMIT_DEG, SCAN_ANGLE_LIMIT_DEG, 181)


# ---------------------------------------------------------------------------
# Pixel containers
# ---------------------------------------------------------------------------


def _check_image_payload(name: str, data: np.ndarray, height: int, width: int, depth: int):
    if data.shape != (height, width, depth):
        raise ValidationError(
            f"{name} payload shape {data.shape} != (height={height}, width={width}, {depth})"
        )
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{name} payload contains non-finite values")


@dataclass
class SpectralCube:
    """Per-pixel reflectance over a wavelength grid.

    ``data`` has shape (height, width, n_bands); values are dimensionless
    reflectance, non-negative.  ``valid`` marks pixels whose spectra are
    trustworthy (reconstruction flags failures instead of raising).
    """

    width: int
    height: int
    grid: WavelengthGrid
    data: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        _check_image_payload("SpectralCube", self.data, self.height, self.width, self.grid.count)
        if np.any(self.data < 0):
            raise ValidationError("SpectralCube reflectance values must be >= 0")
        if self.valid is not None:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != (self.height, self.width):
                raise ValidationError("SpectralCube valid mask shape mismatch")

    @property
    def valid_mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones((self.height, self.width), dtype=bool)
        return self.valid

    def spectrum_at(self, x: int, y: int) -> np.ndarray:
        return np.asarray(self.data[y, x], dtype=np.float64)


@dataclass
class ScanStack:
    """Per-pixel intensity for each galvo angle of a sweep.

    ``data`` has shape (height, width, n_angles) in linear radiometric units.
    """

    width: int
    height: int
    angles: tuple[float, ...]
    data: np.ndarray
    camera: Camera = Camera.VNIR
    valid: np.ndarray | None = None

    def __post_init__(self):
        angles = tuple(float(a) for a in self.angles)
        self.angles = angles
        arr = np.asarray(angles)
        if arr.size == 0:
            raise ValidationError("scan stack needs at least one angle")
        if np.any(np.diff(arr) <= 0):
            raise ValidationError("scan angles must be strictly increasing")
        if arr[0] < -SCAN_ANGLE_LIMIT_DEG - 1e-9 or arr[-1] > SCAN_ANGLE_LIMIT_DEG + 1e-9:
            raise ValidationError(
                f"scan angles must lie within +/-{SCAN_ANGLE_LIMIT_DEG} deg"
            )
        self.data = np.asarray(self.data)
        _check_image_payload("ScanStack", self.data, self.height, self.width, arr.size)
        if np.any(self.data < 0):
            raise ValidationError("scan stack intensities must be >= 0")
        if self.valid is not None:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != (self.height, self.width):
                raise ValidationError("ScanStack valid mask shape mismatch")

    @property
    def n_angles(self) -> int:
        return len(self.angles)

    @property
    def angle_array(self) -> np.ndarray:
        return np.asarray(self.angles, dtype=np.float64)

    @property
    def valid_mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones((self.height, self.width), dtype=bool)
        return self.valid


@dataclass
class DepthMap:
    """Per-pixel depth in meters with a validity mask.

    Invalid pixels carry a 0.0 sentinel and are excluded from statistics.
    """

    width: int
    height: int
    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.depth.shape != (self.height, self.width):
            raise ValidationError("DepthMap depth shape mismatch")
        if self.valid.shape != (self.height, self.width):
            raise ValidationError("DepthMap valid mask shape mismatch")
        if not np.all(np.isfinite(self.depth[self.valid])):
            raise ValidationError("DepthMap has non-finite valid depths")
        if np.any(self.depth[self.valid] <= 0):
            raise ValidationError("DepthMap valid depths must be > 0")
        self.depth = np.where(self.valid, self.depth, 0.0)

    @classmethod
    def full(cls, width: int, height: int, depth_m: float) -> "DepthMap":
        return cls(
            width,
            height,
            np.full((height, width), float(depth_m)),
            np.ones((height, width), dtype=bool),
        )

    def masked(self, extra_valid: np.ndarray) -> "DepthMap":
        keep = self.valid & np.asarray(extra_valid, dtype=bool)
        return DepthMap(self.width, self.height, np.where(keep, self.depth, 0.0), keep)


# ---------------------------------------------------------------------------
# Camera geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Pinhole:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be > 0")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def unproject(self, x, y, depth):
        """Pixel coordinates + depth -> 3D points in the camera frame."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        z = np.asarray(depth, dtype=np.float64)
        return np.stack(
            [(x - self.cx) / self.fx * z, (y - self.cy) / self.fy * z, z], axis=-1
        )

    def project(self, points):
        """3D points in the camera frame -> pixel coordinates and depth."""
        pts = np.asarray(points, dtype=np.float64)
        z = pts[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pts[..., 0] / z + self.cx
            v = self.fy * pts[..., 1] / z + self.cy
        return u, v, z


@dataclass(frozen=True)
class CameraRig:
    """Stereo pair geometry: VNIR is the reference (left) camera.

    ``rotation`` and ``translation`` map VNIR-frame coordinates into the
    SWIR frame: X_swir = R @ X_vnir + t.  ``baseline`` is the rectified
    baseline in meters; by default it is the distance between the two
    camera centers.  A zero baseline is representable (co-located cameras
    are useful in alignment tests) but rejected by rectification.
    """

    vnir: Pinhole
    swir: Pinhole
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    baseline: float | None = None

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValidationError("rotation must be 3x3")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-8):
            raise ValidationError("rotation must be orthonormal")
        if not np.isclose(np.linalg.det(rot), 1.0, atol=1e-8):
            raise ValidationError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)
        if self.baseline is None:
            object.__setattr__(self, "baseline", float(np.linalg.norm(self.swir_center)))
        elif self.baseline <= 0:
            raise ValidationError("explicit baseline must be > 0")

    @property
    def swir_center(self) -> np.ndarray:
        """SWIR camera center expressed in the VNIR frame."""
        return -self.rotation.T @ self.translation

    def intrinsics(self, camera: Camera) -> Pinhole:
        if camera == Camera.VNIR:
            return self.vnir
        if camera == Camera.SWIR:
            return self.swir
        raise ContractError(f"no intrinsics for camera {camera}")

    def vnir_to_swir(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def swir_to_vnir(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.translation) @ self.rotation


def parallel_rig(
    width: int = 96,
    height: int = 96,
    focal_px: float = 300.0,
    baseline_m: float = 0.05,
) -> CameraRig:
    """Convenience rig: identical parallel cameras separated along +x."""
    cam = Pinhole(focal_px, focal_px, (width - 1) / 2.0, (height - 1) / 2.0, width, height)
    return CameraRig(cam, cam, np.eye(3), np.array([-baseline_m, 0.0, 0.0]))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def spectral_angle(a, b) -> float:
    """Angle in radians between two spectra (arccos of normalized dot product)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ContractError(f"spectra length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ContractError("spectral_angle needs spectra of length >= 2")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("spectral_angle is undefined for an all-zero spectrum")
    cosang = np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)
    return float(np.clip(np.arccos(cosang), 0.0, np.pi))


def rmse(a, b) -> float:
    """Root-mean-square difference between two equally shaped arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def resample_spectrum(values, source: WavelengthGrid, target: WavelengthGrid) -> np.ndarray:
    """Linearly resample a spectrum from one grid onto another.

    The target range must lie inside the source range; extrapolation is refused.
    """
    src = source.array
    dst = target.array
    vals = np.asarray(values, dtype=np.float64)
    if vals.shape[-1] != src.size:
        raise ContractError(
            f"spectrum has {vals.shape[-1]} samples but source grid has {src.size} bands"
        )
    if dst[0] < src[0] - 1e-9 or dst[-1] > src[-1] + 1e-9:
        raise GridRangeError(
            f"target range [{dst[0]:.1f}, {dst[-1]:.1f}] nm extends outside "
            f"source range [{src[0]:.1f}, {src[-1]:.1f}] nm"
        )
    if vals.ndim == 1:
        return np.interp(dst, src, vals)
    flat = vals.reshape(-1, src.size)
    out = np.empty((flat.shape[0], dst.size))
    for i in range(flat.shape[0]):
        out[i] = np.interp(dst, src, flat[i])
    return out.reshape(vals.shape[:-1] + (dst.size,))


def resample_cube(cube: SpectralCube, target: WavelengthGrid) -> SpectralCube:
    """Resample every pixel spectrum of a cube onto a new grid."""
    src = cube.grid.array
    dst = target.array
    if dst[0] < src[0] - 1e-9 or dst[-1] > src[-1] + 1e-9:
        raise GridRangeError("target grid extends outside the cube's grid")
    # Precompute gather indices/weights once; exact band picks stay exact.
    idx = np.clip(np.searchsorted(src, dst, side="right") - 1, 0, src.size - 2)
    t = (dst - src[idx]) / (src[idx + 1] - src[idx])
    t = np.clip(t, 0.0, 1.0)
    data = cube.data[..., idx] * (1.0 - t) + cube.data[..., idx + 1] * t
    exact = np.isclose(t, 0.0)
    if np.any(exact):
        data[..., exact] = cube.data[..., idx[exact]]
    return SpectralCube(cube.width, cube.height, target, data, valid=cube.valid)
