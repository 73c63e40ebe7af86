"""Image formation for galvo-swept dispersed structured light.

A scene point at pixel (x, y) and depth Z receives, at galvo angle theta and
wavelength lam, the weight

    exp(-(theta - mu)^2 / (2 sigma^2)) * T(lam) * R(lam) * E(lam) / Z^2

where (mu, sigma) come from a calibrated 4-D parameter field, T is the optics
transmittance, R the scan-mirror reflectance and E the source emission.  The
camera integrates this against its spectral sensitivity over wavelength; with
a trapezoidal band discretization that integral becomes a per-pixel matrix S
mapping a reflectance spectrum to the intensity-versus-angle vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, DepthMap, ScanStack, SpectralCube, WavelengthGrid
from .errors import ContractError, DomainError, ValidationError
from .interp import linear_weights, pchip_eval
from .parallel import map_row_chunks

# ---------------------------------------------------------------------------
# Spectral curves and device models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Curve:
    """A sampled spectral curve with linear interpolation between samples.

    ``extrapolation`` is either "clamp" (hold the end values, used for optics
    curves defined across the whole range) or "zero" (sensitivities vanish
    outside their sampled support).
    """

    wavelengths: tuple[float, ...]
    values: tuple[float, ...]
    extrapolation: str = "clamp"

    def __post_init__(self):
        w = np.asarray(self.wavelengths, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if w.size != v.size or w.size < 1:
            raise ValidationError("curve needs matching, non-empty sample arrays")
        if np.any(np.diff(w) <= 0):
            raise ValidationError("curve wavelengths must be strictly increasing")
        if not (np.all(np.isfinite(v)) and np.all(v >= 0)):
            raise ValidationError("curve values must be finite and >= 0")
        if self.extrapolation not in ("clamp", "zero"):
            raise ValidationError(f"unknown extrapolation mode {self.extrapolation!r}")
        object.__setattr__(self, "wavelengths", tuple(float(x) for x in w))
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        w = np.asarray(self.wavelengths)
        v = np.asarray(self.values)
        if self.extrapolation == "zero":
            out = np.interp(lam, w, v, left=0.0, right=0.0)
        else:
            out = np.interp(lam, w, v)
        return out if out.ndim else float(out)

    @classmethod
    def constant(cls, value: float, lo: float = 450.0, hi: float = 1500.0) -> "Curve":
        return cls((lo, hi), (value, value))


@dataclass(frozen=True)
class IlluminantModel:
    """Optics transmittance, mirror reflectance and source emission curves."""

    transmittance: Curve
    mirror_reflectance: Curve
    emission: Curve

    def __post_init__(self):
        for name in ("transmittance", "mirror_reflectance"):
            if max(getattr(self, name).values) > 1.0 + 1e-12:
                raise ValidationError(f"{name} must be <= 1 everywhere")

    def combined(self, lam):
        """T(lam) * R(lam) * E(lam)."""
        return (
            np.asarray(self.transmittance(lam))
            * np.asarray(self.mirror_reflectance(lam))
            * np.asarray(self.emission(lam))
        )

    @classmethod
    def ideal(cls) -> "IlluminantModel":
        one = Curve.constant(1.0)
        return cls(one, one, one)


@dataclass(frozen=True)
class SensorModel:
    """Per-camera spectral sensitivity plus capture parameters.

    ``noise_fraction`` is the additive Gaussian noise standard deviation as a
    fraction of ``saturation``.
    """

    sensitivity: dict[Camera, Curve]
    saturation: float = 1.0
    noise_fraction: float = 0.0
    exposures: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.saturation <= 0:
            raise ValidationError("saturation must be > 0")
        if self.noise_fraction < 0:
            raise ValidationError("noise_fraction must be >= 0")
        if any(e <= 0 for e in self.exposures):
            raise ValidationError("exposure scales must be > 0")

    def omega(self, camera: Camera, lam):
        try:
            curve = self.sensitivity[camera]
        except KeyError:
            raise ContractError(f"sensor model has no sensitivity for {camera}") from None
        return curve(lam)

    @property
    def noise_sigma(self) -> float:
        return self.noise_fraction * self.saturation

    @classmethod
    def ideal(cls) -> "SensorModel":
        one = Curve.constant(1.0)
        return cls({Camera.VNIR: one, Camera.SWIR: one})


# ---------------------------------------------------------------------------
# Gaussian parameter field
# ---------------------------------------------------------------------------


@dataclass
class GaussianField:
    """Peak-angle and angular-width fields on an (x, y, Z, lambda) lattice.

    mu and sigma are indexed [ix, iy, iz, il] and given in degrees.  Queries
    interpolate linearly along x and y and with a monotone (shape-preserving)
    cubic along Z and lambda; positions outside the lattice hull are clamped
    to its boundary.
    """

    xs: np.ndarray
    ys: np.ndarray
    zs: np.ndarray
    lams: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.float64)
        self.zs = np.asarray(self.zs, dtype=np.float64)
        self.lams = np.asarray(self.lams, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        shape = (self.xs.size, self.ys.size, self.zs.size, self.lams.size)
        for name, axis in (("xs", self.xs), ("ys", self.ys), ("zs", self.zs), ("lams", self.lams)):
            if axis.size == 0:
                raise ValidationError(f"field axis {name} is empty")
            if np.any(np.diff(axis) <= 0):
                raise ValidationError(f"field axis {name} must be strictly increasing")
        if self.mu.shape != shape or self.sigma.shape != shape:
            raise ValidationError(
                f"field sample arrays must have shape {shape}, got mu {self.mu.shape}"
            )
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.sigma))):
            raise ValidationError("field samples must be finite")
        if np.any(self.sigma <= 0):
            raise ValidationError("sigma must be > 0 everywhere")
        self._check_mu_monotone()

    def _check_mu_monotone(self):
        if self.lams.size < 2:
            return
        d = np.diff(self.mu, axis=3)
        inc = np.all(d > 0, axis=3)
        dec = np.all(d < 0, axis=3)
        if np.all(inc) or np.all(dec):
            return
        bad = np.argwhere(~(inc | dec))
        if len(bad) == 0:
            raise ValidationError(
                "mu wavelength-monotonicity direction flips between lattice lines"
            )
        ix, iy, iz = bad[0]
        raise ValidationError(
            "mu must be strictly monotone in wavelength along every lattice line; "
            f"violated at lattice line (ix={ix}, iy={iy}, iz={iz})"
        )

    # -- queries ------------------------------------------------------------

    def _blend_xy(self, table: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ix0, ix1, wx = linear_weights(self.xs, x)
        iy0, iy1, wy = linear_weights(self.ys, y)
        wx = wx[..., None, None]
        wy = wy[..., None, None]
        return (
            table[ix0, iy0] * (1.0 - wx) * (1.0 - wy)
            + table[ix1, iy0] * wx * (1.0 - wy)
            + table[ix0, iy1] * (1.0 - wx) * wy
            + table[ix1, iy1] * wx * wy
        )

    def _query_table(self, table, x, y, z, lam):
        # x/y/z share a broadcast shape Q; lam may add trailing axes (e.g. a
        # shared band grid), handled by broadcasting inside pchip_eval.
        vals = self._blend_xy(table, x, y)  # (Q..., nz, nl)
        vals = np.moveaxis(vals, -2, -1)  # (Q..., nl, nz)
        vals = pchip_eval(self.zs, vals, np.asarray(z, dtype=np.float64)[..., None])
        return pchip_eval(self.lams, vals, lam)

    def query(self, x, y, z, lam):
        """(mu, sigma) at broadcastable positions; clamped to the lattice hull."""
        x, y, z = np.broadcast_arrays(
            np.asarray(x, dtype=np.float64),
            np.asarray(y, dtype=np.float64),
            np.asarray(z, dtype=np.float64),
        )
        lam = np.asarray(lam, dtype=np.float64)
        mu = self._query_table(self.mu, x, y, z, lam)
        sigma = self._query_table(self.sigma, x, y, z, lam)
        return mu, sigma

    def query_bands(self, x, y, z, bands: np.ndarray):
        """(mu, sigma) with a trailing axis over a shared list of bands."""
        x = np.asarray(x, dtype=np.float64)[..., None]
        y = np.asarray(y, dtype=np.float64)[..., None]
        z = np.asarray(z, dtype=np.float64)[..., None]
        lam = np.asarray(bands, dtype=np.float64)
        return self.query(x, y, z, lam)

    @property
    def hull(self) -> dict:
        return {
            "x": (float(self.xs[0]), float(self.xs[-1])),
            "y": (float(self.ys[0]), float(self.ys[-1])),
            "z": (float(self.zs[0]), float(self.zs[-1])),
            "lam": (float(self.lams[0]), float(self.lams[-1])),
        }


# ---------------------------------------------------------------------------
# Weights and system matrices
# ---------------------------------------------------------------------------


def gaussian_weight(field: GaussianField, illum: IlluminantModel, x, y, z, theta, lam):
    """Dispersed-light weight at one or more (x, y, Z, theta, lambda) samples."""
    z_arr = np.asarray(z, dtype=np.float64)
    if np.any(z_arr <= 0):
        raise DomainError("depth must be > 0")
    mu, sigma = field.query(x, y, z_arr, lam)
    theta = np.asarray(theta, dtype=np.float64)
    g = np.exp(-((theta - mu) ** 2) / (2.0 * sigma**2))
    out = g * np.asarray(illum.combined(lam)) / z_arr**2
    return float(out) if out.ndim == 0 else out


def _band_response(grid: WavelengthGrid, illum: IlluminantModel, sensor: SensorModel) -> np.ndarray:
    lam = grid.array
    return np.asarray(sensor.omega(grid.camera, lam)) * np.asarray(illum.combined(lam))


def geometry_kernel(
    x,
    y,
    z,
    angles: np.ndarray,
    grid: WavelengthGrid,
    fld: GaussianField,
    dtype=np.float64,
) -> np.ndarray:
    """Response-independent part of the system matrix.

    Entry (..., i, j) = exp(-(theta_i - mu_j)^2 / (2 sigma_j^2)) * dlam_j / Z^2
    for broadcastable pixel positions.  Multiplying by a per-band response
    (either the physical product Omega*T*R*E or a calibrated response) yields
    the full matrix.
    """
    z_arr = np.asarray(z, dtype=np.float64)
    if np.any(z_arr <= 0):
        raise DomainError("depth must be > 0")
    mu, sigma = fld.query_bands(x, y, z_arr, grid.array)  # (..., M)
    angles = np.asarray(angles, dtype=np.float64)
    diff = angles[..., :, None] - mu[..., None, :]  # (..., N, M)
    g = np.exp(-(diff**2) / (2.0 * sigma[..., None, :] ** 2)).astype(dtype)
    g *= grid.band_widths().astype(dtype)
    g /= (z_arr**2).astype(dtype)[..., None, None]
    return g


def assemble_system_matrix(
    x,
    y,
    z,
    angles: np.ndarray,
    grid: WavelengthGrid,
    fld: GaussianField,
    illum: IlluminantModel,
    sensor: SensorModel,
    dtype=np.float64,
) -> np.ndarray:
    """Per-pixel system matrix with entries Omega(lam_j) * Phi(theta_i, lam_j) * dlam_j."""
    kern = geometry_kernel(x, y, z, angles, grid, fld, dtype=dtype)
    return kern * _band_response(grid, illum, sensor).astype(dtype)


def system_from_response(
    x,
    y,
    z,
    angles: np.ndarray,
    grid: WavelengthGrid,
    fld: GaussianField,
    response: np.ndarray,
    dtype=np.float64,
) -> np.ndarray:
    """System matrix built from a calibrated per-band radiometric response."""
    response = np.asarray(response, dtype=np.float64)
    if response.shape != (grid.count,):
        raise ContractError("response must have one value per grid band")
    kern = geometry_kernel(x, y, z, angles, grid, fld, dtype=dtype)
    return kern * response.astype(dtype)


def render_intensity_vector(system: np.ndarray, spectrum: np.ndarray) -> np.ndarray:
    """Intensity-versus-angle vector for one pixel: S @ H."""
    system = np.asarray(system)
    spectrum = np.asarray(spectrum)
    if system.ndim != 2 or spectrum.ndim != 1 or system.shape[1] != spectrum.size:
        raise ContractError(
            f"system {system.shape} incompatible with spectrum of length {spectrum.shape}"
        )
    return system @ spectrum


def render_scan_stack(
    cube: SpectralCube,
    depth: DepthMap,
    fld: GaussianField,
    illum: IlluminantModel,
    sensor: SensorModel,
    angles: np.ndarray,
    exposure: float = 1.0,
    seed: int | None = None,
    row_chunk: int = 16,
    threads: int | None = None,
    dtype=np.float64,
) -> ScanStack:
    """Render the full sweep for one camera view.

    Pixels with invalid depth render as zero intensity and are flagged
    invalid.  When the sensor model carries noise, i.i.d. Gaussian noise is
    added per sample (seeded, reproducible) and the result is clipped to
    [0, saturation]; noiseless renders are clipped only at saturation.
    Row chunks render independently (and in parallel when threads > 1).
    """
    if (cube.width, cube.height) != (depth.width, depth.height):
        raise ContractError("cube and depth dimensions differ")
    h, w = cube.height, cube.width
    angles = np.asarray(angles, dtype=np.float64)
    n = angles.size
    out = np.zeros((h, w, n), dtype=dtype)
    valid = depth.valid & cube.valid_mask
    xg, yg = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    response = _band_response(cube.grid, illum, sensor)

    def render_rows(y0: int, y1: int):
        rows_valid = valid[y0:y1]
        if not np.any(rows_valid):
            return
        z_rows = np.where(rows_valid, depth.depth[y0:y1], 1.0)
        kern = geometry_kernel(
            xg[y0:y1], yg[y0:y1], z_rows, angles, cube.grid, fld, dtype=dtype
        )
        kern *= response.astype(dtype)
        spec = cube.data[y0:y1].astype(dtype)
        block = np.einsum("hwnm,hwm->hwn", kern, spec)
        block[~rows_valid] = 0.0
        out[y0:y1] = block

    map_row_chunks(render_rows, h, row_chunk, threads)

    out *= float(exposure)
    if sensor.noise_fraction > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, sensor.noise_sigma, out.shape).astype(dtype)
    np.clip(out, 0.0, sensor.saturation, out=out)
    return ScanStack(w, h, tuple(angles), out, camera=cube.grid.camera, valid=valid)


# ---------------------------------------------------------------------------
# HDR fusion
# ---------------------------------------------------------------------------

HDR_WEIGHT_LOW = 0.02
HDR_WEIGHT_HIGH = 0.95


def hdr_fuse(captures: list[tuple[ScanStack, float]], saturation: float) -> ScanStack:
    """Fuse exposure-bracketed sweeps into one radiance-normalized sweep.

    Each sample contributes value/exposure, weighted by a symmetric hat over
    [0.02, 0.95] x saturation so saturated and near-zero samples drop out.
    Where every weight vanishes, the longest unsaturated exposure wins; if all
    are saturated the shortest exposure provides the best lower bound.
    """
    if not captures:
        raise ContractError("hdr_fuse needs at least one capture")
    first = captures[0][0]
    for stack, exposure in captures:
        if (stack.width, stack.height, stack.angles) != (first.width, first.height, first.angles):
            raise ContractError("captures must share dimensions and angle lists")
        if exposure <= 0:
            raise ContractError("exposure scales must be > 0")

    lo = HDR_WEIGHT_LOW * saturation
    hi = HDR_WEIGHT_HIGH * saturation
    half = 0.5 * (hi - lo)

    values = np.stack([stack.data for stack, _ in captures])  # (K, H, W, N)
    exposures = np.asarray([e for _, e in captures], dtype=np.float64)
    weights = np.clip(np.minimum(values - lo, hi - values) / half, 0.0, 1.0)
    normalized = values / exposures[:, None, None, None]

    wsum = weights.sum(axis=0)
    fused = np.where(wsum > 0, (weights * normalized).sum(axis=0) / np.where(wsum > 0, wsum, 1.0), 0.0)

    dead = wsum <= 0
    if np.any(dead):
        unsat = values < hi
        rank = np.where(unsat, exposures[:, None, None, None], -np.inf)
        pick = np.argmax(rank, axis=0)
        none_unsat = ~np.any(unsat, axis=0)
        if np.any(none_unsat):
            pick = np.where(none_unsat, int(np.argmin(exposures)), pick)
        fallback = np.take_along_axis(normalized, pick[None], axis=0)[0]
        fused = np.where(dead, fallback, fused)

    valid = np.ones((first.height, first.width), dtype=bool)
    for stack, _ in captures:
        valid &= stack.valid_mask
    return ScanStack(
        first.width, first.height, first.angles, fused, camera=first.camera, valid=valid
    )


__all__ = [
    "Curve",
    "IlluminantModel",
    "SensorModel",
    "GaussianField",
    "gaussian_weight",
    "geometry_kernel",
    "assemble_system_matrix",
    "system_from_response",
    "render_intensity_vector",
    "render_scan_stack",
    "hdr_fuse",
]
