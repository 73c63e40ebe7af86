"""Cross-view alignment, cube merging, and guided sharpening.

The SWIR reflectance cube is pulled into the VNIR reference view by
depth-guided reprojection; correspondences whose predicted and observed
depths disagree beyond a threshold are discarded (ghost rejection) instead of
being inpainted.  The merged 450-1500 nm cube is then sharpened band by band
with a guided filter, using in-focus guide bands chosen separately for the
VNIR and SWIR ranges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, CameraRig, DepthMap, SpectralCube, WavelengthGrid, union_grid
from .errors import ConfigError, ContractError, DomainError
from .depth import bilinear_sample

MERGE_RULES = ("prefer-vnir-below-875", "prefer-swir-above-890", "blend")
VNIR_SWIR_OVERLAP = (875.0, 890.0)


@dataclass(frozen=True)
class FusionConfig:
    """Alignment, merge, and sharpening settings."""

    depth_threshold_m: float = 0.005
    merge_rule: str = "prefer-vnir-below-875"
    guided_radius: int = 4
    guided_eps: float = 1e-3
    guide_vnir: tuple[float, float] = (510.0, 850.0)
    guide_swir: tuple[float, float] = (950.0, 1200.0)

    def __post_init__(self):
        if self.depth_threshold_m <= 0:
            raise ConfigError("depth discrepancy threshold must be > 0")
        if self.merge_rule not in MERGE_RULES:
            raise ConfigError(f"merge rule must be one of {MERGE_RULES}")
        if self.guided_radius < 1:
            raise ConfigError("guided filter radius must be >= 1")
        for name in ("guide_vnir", "guide_swir"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"{name} interval must be increasing")

    def guide_interval(self, camera: Camera) -> tuple[float, float]:
        if camera == Camera.VNIR:
            return self.guide_vnir
        if camera == Camera.SWIR:
            return self.guide_swir
        raise ContractError(f"no guide interval for camera {camera}")


# ---------------------------------------------------------------------------
# View alignment
# ---------------------------------------------------------------------------


def align_swir_to_vnir(
    h_swir: SpectralCube,
    z_vnir: DepthMap,
    z_swir: DepthMap,
    rig: CameraRig,
    cfg: FusionConfig = FusionConfig(),
) -> SpectralCube:
    """Fetch the SWIR spectrum seen by every VNIR pixel.

    VNIR pixels are unprojected with their reconstructed depth, moved into
    the SWIR frame, and reprojected; the SWIR cube is sampled bilinearly at
    the hit.  A pixel is invalidated (never inpainted) when it leaves the
    SWIR image, touches invalid SWIR data, or when the predicted depth and
    the observed SWIR depth disagree by more than the ghost threshold.
    """
    if (z_vnir.width, z_vnir.height) != (rig.vnir.width, rig.vnir.height):
        raise ContractError("VNIR depth dimensions do not match the rig")
    if (h_swir.width, h_swir.height) != (z_swir.width, z_swir.height):
        raise ContractError("SWIR cube and depth dimensions differ")

    h, w = z_vnir.height, z_vnir.width
    xg, yg = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    pts = rig.vnir.unproject(xg, yg, np.where(z_vnir.valid, z_vnir.depth, 1.0))
    pts_s = rig.vnir_to_swir(pts)
    u, v, z_pred = rig.swir.project(pts_s)

    ok = z_vnir.valid & (z_pred > 0)

    swir_ok = (z_swir.valid & h_swir.valid_mask).astype(np.float64)
    mask_hit, inside = bilinear_sample(swir_ok, u, v)
    ok &= inside & (mask_hit >= 1.0 - 1e-9)

    z_obs, _ = bilinear_sample(np.where(z_swir.valid, z_swir.depth, 0.0), u, v)
    ok &= np.abs(z_pred - z_obs) <= cfg.depth_threshold_m

    data = np.zeros((h, w, h_swir.grid.count))
    spectra, _ = bilinear_sample(h_swir.data.astype(np.float64), u, v)
    data[ok] = spectra[ok]
    return SpectralCube(w, h, h_swir.grid, np.maximum(data, 0.0), valid=ok)


# ---------------------------------------------------------------------------
# Cube merging
# ---------------------------------------------------------------------------


def _interp_bands(cube: SpectralCube, targets: np.ndarray) -> np.ndarray:
    """Per-pixel linear interpolation of selected band centers (exact on-grid)."""
    src = cube.grid.array
    idx = np.clip(np.searchsorted(src, targets, side="right") - 1, 0, src.size - 2)
    t = np.clip((targets - src[idx]) / (src[idx + 1] - src[idx]), 0.0, 1.0)
    vals = cube.data[..., idx] * (1.0 - t) + cube.data[..., idx + 1] * t
    exact = t == 0.0
    if np.any(exact):
        vals[..., exact] = cube.data[..., idx[exact]]
    return vals


def merge_cubes(
    h_vnir: SpectralCube,
    h_swir_aligned: SpectralCube,
    cfg: FusionConfig = FusionConfig(),
) -> tuple[SpectralCube, np.ndarray]:
    """Merge the two view-aligned cubes onto one strictly increasing grid.

    Returns (fused cube, swir_band_valid).  The fused cube's own mask marks
    pixels with any usable data (valid VNIR reconstruction); swir_band_valid
    marks pixels whose SWIR-sourced bands are trustworthy — elsewhere those
    bands are zeroed and only the VNIR bands carry signal.
    """
    if (h_vnir.width, h_vnir.height) != (h_swir_aligned.width, h_swir_aligned.height):
        raise ContractError("cubes must share dimensions")
    vn = h_vnir.grid.array
    sw = h_swir_aligned.grid.array

    if cfg.merge_rule == "prefer-vnir-below-875":
        keep_v = vn < VNIR_SWIR_OVERLAP[0]
        bands = np.concatenate([vn[keep_v], sw])
        sources = [Camera.VNIR] * int(keep_v.sum()) + [Camera.SWIR] * sw.size
        data = np.concatenate([h_vnir.data[..., keep_v], h_swir_aligned.data], axis=-1)
    elif cfg.merge_rule == "prefer-swir-above-890":
        keep_s = sw > VNIR_SWIR_OVERLAP[1]
        bands = np.concatenate([vn, sw[keep_s]])
        sources = [Camera.VNIR] * vn.size + [Camera.SWIR] * int(keep_s.sum())
        data = np.concatenate([h_vnir.data, h_swir_aligned.data[..., keep_s]], axis=-1)
    else:  # blend across the overlap window
        grid_union = union_grid(h_vnir.grid, h_swir_aligned.grid)
        bands = grid_union.array
        sources = list(grid_union.band_sources)
        lo, hi = max(sw[0], vn[0]), min(vn[-1], sw[-1])
        ramp = np.clip((bands - lo) / max(hi - lo, 1e-9), 0.0, 1.0)
        data = np.zeros(h_vnir.data.shape[:2] + (bands.size,))
        vn_part = bands <= vn[-1]
        sw_part = bands >= sw[0]
        data[..., vn_part] = _interp_bands(h_vnir, bands[vn_part])
        sw_vals = _interp_bands(h_swir_aligned, bands[sw_part])
        w = ramp[sw_part]
        data[..., sw_part] = (1.0 - w) * data[..., sw_part] + w * sw_vals

    if np.any(np.diff(bands) <= 0):
        raise ConfigError("merge rule produced duplicate or unsorted band centers")

    grid = WavelengthGrid(tuple(bands), Camera.FUSED, tuple(sources))
    swir_band_valid = h_swir_aligned.valid_mask.copy()
    swir_cols = np.array([s == Camera.SWIR for s in sources])
    data = np.asarray(data, dtype=np.float64).copy()
    ghosted = ~swir_band_valid
    if np.any(ghosted) and np.any(swir_cols):
        data[ghosted[..., None] & swir_cols[None, None, :]] = 0.0
    cube = SpectralCube(
        h_vnir.width, h_vnir.height, grid, np.maximum(data, 0.0), valid=h_vnir.valid_mask.copy()
    )
    return cube, swir_band_valid


# ---------------------------------------------------------------------------
# Guided filtering and sharpening
# ---------------------------------------------------------------------------


def _box_mean(img: np.ndarray, radius: int) -> np.ndarray:
    """Mean over a (2r+1)^2 window truncated at the borders (integral image)."""
    h, w = img.shape
    pad = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(img, axis=0), axis=1, out=pad[1:, 1:])
    r = radius
    y0 = np.clip(np.arange(h) - r, 0, h)
    y1 = np.clip(np.arange(h) + r + 1, 0, h)
    x0 = np.clip(np.arange(w) - r, 0, w)
    x1 = np.clip(np.arange(w) + r + 1, 0, w)
    total = pad[y1[:, None], x1[None, :]] - pad[y0[:, None], x1[None, :]] \
        - pad[y1[:, None], x0[None, :]] + pad[y0[:, None], x0[None, :]]
    count = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return total / count


def guided_filter(image: np.ndarray, guide: np.ndarray, radius: int, eps: float) -> np.ndarray:
    """Edge-preserving local linear transfer of the guide's structure.

    Classic formulation: per window, fit image ~ a*guide + b, box-average the
    coefficients, and evaluate a*guide + b per pixel.
    """
    image = np.asarray(image, dtype=np.float64)
    guide = np.asarray(guide, dtype=np.float64)
    if image.shape != guide.shape or image.ndim != 2:
        raise ContractError("guided_filter needs two equal-shape 2-D images")
    if radius < 1:
        raise ContractError("guided filter radius must be >= 1")
    mean_i = _box_mean(guide, radius)
    mean_p = _box_mean(image, radius)
    cov_ip = _box_mean(guide * image, radius) - mean_i * mean_p
    var_i = _box_mean(guide * guide, radius) - mean_i * mean_i
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    return _box_mean(a, radius) * guide + _box_mean(b, radius)


def nearest_guide_band(
    lam: float, grid_bands: np.ndarray, interval: tuple[float, float]
) -> int:
    """Index of the grid band nearest to lam inside the guide interval.

    Ties resolve toward the shorter wavelength.
    """
    lo, hi = interval
    candidates = np.nonzero((grid_bands >= lo) & (grid_bands <= hi))[0]
    if candidates.size == 0:
        raise ConfigError(
            f"grid has no bands inside the guide interval [{lo:.0f}, {hi:.0f}] nm"
        )
    dist = np.abs(grid_bands[candidates] - lam)
    best = dist.min()
    return int(candidates[np.nonzero(dist == best)[0][0]])


def guided_sharpen(cube: SpectralCube, cfg: FusionConfig = FusionConfig()) -> SpectralCube:
    """Sharpen defocus-blurred bands against their nearest in-focus guide band.

    Bands inside their camera's guide interval pass through bit-exact.  VNIR
    and SWIR ranges are treated separately: each band only ever uses a guide
    from its own camera's bands.
    """
    bands = cube.grid.array
    sources = [cube.grid.source_of(j) for j in range(cube.grid.count)]
    out = cube.data.astype(np.float64).copy()
    for camera in (Camera.VNIR, Camera.SWIR):
        cam_idx = [j for j, s in enumerate(sources) if s == camera]
        if not cam_idx:
            continue
        cam_bands = bands[cam_idx]
        lo, hi = cfg.guide_interval(camera)
        if not np.any((cam_bands >= lo) & (cam_bands <= hi)):
            raise ConfigError(
                f"{camera.value} bands are disjoint from their guide interval "
                f"[{lo:.0f}, {hi:.0f}] nm"
            )
        for j, lam in zip(cam_idx, cam_bands):
            if lo <= lam <= hi:
                continue  # in-focus band: untouched
            guide_j = cam_idx[nearest_guide_band(lam, cam_bands, (lo, hi))]
            out[..., j] = guided_filter(
                cube.data[..., j], cube.data[..., guide_j], cfg.guided_radius, cfg.guided_eps
            )
    return SpectralCube(
        cube.width, cube.height, cube.grid, np.maximum(out, 0.0), valid=cube.valid
    )


# ---------------------------------------------------------------------------
# Chromatic blur model
# ---------------------------------------------------------------------------


def _gaussian_blur2d(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge replication."""
    if sigma <= 0:
        return np.asarray(img, dtype=np.float64).copy()
    r = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    padded = np.pad(np.asarray(img, dtype=np.float64), ((0, 0), (r, r)), mode="edge")
    out = np.zeros_like(img, dtype=np.float64)
    for i, kv in enumerate(k):
        out += kv * padded[:, i : i + img.shape[1]]
    padded = np.pad(out, ((r, r), (0, 0)), mode="edge")
    out2 = np.zeros_like(out)
    for i, kv in enumerate(k):
        out2 += kv * padded[i : i + img.shape[0], :]
    return out2


@dataclass(frozen=True)
class ChromaticBlurModel:
    """Per-band defocus blur: zero inside the guide sets, growing toward grid edges."""

    grid: WavelengthGrid
    sigmas: tuple[float, ...]

    def __post_init__(self):
        if len(self.sigmas) != self.grid.count:
            raise ContractError("need one blur sigma per band")
        if any(s < 0 for s in self.sigmas):
            raise DomainError("blur sigmas must be >= 0")

    @classmethod
    def for_grid(
        cls,
        grid: WavelengthGrid,
        cfg: FusionConfig = FusionConfig(),
        max_sigma: float = 1.6,
        floor_sigma: float = 0.7,
    ) -> "ChromaticBlurModel":
        bands = grid.array
        sources = [grid.source_of(j) for j in range(grid.count)]
        dist = np.zeros(grid.count)
        for camera in (Camera.VNIR, Camera.SWIR):
            lo, hi = cfg.guide_interval(camera)
            for j, (lam, src) in enumerate(zip(bands, sources)):
                if src != camera:
                    continue
                dist[j] = max(lo - lam, lam - hi, 0.0)
        sigmas = np.zeros(grid.count)
        if dist.max() > 0:
            blurred = dist > 0
            sigmas[blurred] = floor_sigma + (max_sigma - floor_sigma) * dist[blurred] / dist.max()
        return cls(grid, tuple(sigmas))

    def apply(self, cube: SpectralCube) -> SpectralCube:
        """Blur each band of a cube according to its sigma."""
        if cube.grid.bands != self.grid.bands:
            raise ContractError("cube grid does not match the blur model grid")
        data = cube.data.astype(np.float64).copy()
        for j, s in enumerate(self.sigmas):
            if s > 0:
                data[..., j] = _gaussian_blur2d(data[..., j], s)
        return SpectralCube(cube.width, cube.height, cube.grid, data, valid=cube.valid)
