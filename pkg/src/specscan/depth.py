"""Depth from max-projected sweeps: stereo synthesis, census matching, warping.

The per-pixel maximum over scan angles turns a sweep into a single
stereo-matchable image.  Matching uses a census window cost, which depends
only on local intensity ORDER, so the large radiometric gap between the two
cameras (and any monotone per-image tone difference) does not perturb the
disparity choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, CameraRig, DepthMap, Pinhole, ScanStack
from .errors import ContractError, DomainError, ValidationError

DEFAULT_WINDOW = (9, 7)
DEFAULT_MIN_DISPARITY = 0.1


def max_project(stack: ScanStack) -> np.ndarray:
    """Per-pixel maximum intensity across all scan angles."""
    return stack.data.max(axis=2)


def mean_project(stack: ScanStack) -> np.ndarray:
    """Per-pixel mean intensity across all scan angles (aggregation baseline)."""
    return stack.data.mean(axis=2)


# ---------------------------------------------------------------------------
# Rectification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RectifiedGeometry:
    """Geometry of a rectified pair.

    ``rotation`` maps VNIR-frame coordinates into the rectified frame (shared
    by both cameras).  The geometric disparity of a point at rectified depth
    Z is focal_px * baseline_m / Z + (cx_left - cx_right); the matcher
    measures x_left - x_right, so measured disparity + disparity_offset is
    what triangulation consumes.
    """

    focal_px: float
    baseline_m: float
    cx_left: float
    cx_right: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray

    @property
    def disparity_offset(self) -> float:
        return self.cx_right - self.cx_left

    @property
    def left_intrinsics(self) -> Pinhole:
        return Pinhole(self.focal_px, self.focal_px, self.cx_left, self.cy, self.width, self.height)

    @property
    def right_intrinsics(self) -> Pinhole:
        return Pinhole(self.focal_px, self.focal_px, self.cx_right, self.cy, self.width, self.height)


def bilinear_sample(image: np.ndarray, u: np.ndarray, v: np.ndarray, fill: float = 0.0):
    """Sample an image (2-D, or 3-D multi-channel) at float coordinates.

    Returns (values, inside-mask); out-of-bounds positions return fill.
    """
    h, w = image.shape[:2]
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = np.clip(u, 0, w - 1)
    vc = np.clip(v, 0, h - 1)
    u0 = np.floor(uc).astype(np.intp)
    v0 = np.floor(vc).astype(np.intp)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = uc - u0
    fv = vc - v0
    mask = inside
    if image.ndim > 2:
        extra = (None,) * (image.ndim - 2)
        fu = fu[(...,) + extra]
        fv = fv[(...,) + extra]
        mask = inside[(...,) + extra]
    out = (
        image[v0, u0] * (1 - fu) * (1 - fv)
        + image[v0, u1] * fu * (1 - fv)
        + image[v1, u0] * (1 - fu) * fv
        + image[v1, u1] * fu * fv
    )
    return np.where(mask, out, fill), inside


def rectify_pair(
    left: np.ndarray,
    right: np.ndarray,
    rig: CameraRig,
    disparity_offset_px: float = 0.0,
):
    """Rotate both views onto a common plane with horizontal epipolar lines.

    Returns (left_rectified, right_rectified, RectifiedGeometry).  Setting
    ``disparity_offset_px`` shifts the right principal point so the matcher
    only has to search the residual disparity range.
    """
    center = rig.swir_center
    baseline = float(np.linalg.norm(center))
    if baseline < 1e-12:
        raise DomainError("cannot rectify a zero-baseline rig")
    r1 = center / baseline
    z_old = np.array([0.0, 0.0, 1.0])
    r2 = np.cross(z_old, r1)
    n2 = np.linalg.norm(r2)
    if n2 < 1e-12:
        raise DomainError("baseline is parallel to the optical axis")
    r2 = r2 / n2
    r3 = np.cross(r1, r2)
    r_rect = np.stack([r1, r2, r3])

    geom = RectifiedGeometry(
        focal_px=rig.vnir.fx,
        baseline_m=baseline,
        cx_left=rig.vnir.cx,
        cx_right=rig.vnir.cx + disparity_offset_px,
        cy=rig.vnir.cy,
        width=rig.vnir.width,
        height=rig.vnir.height,
        rotation=r_rect,
    )

    left_rect = _warp_to_rectified(left, rig.vnir, geom.left_intrinsics, r_rect.T)
    # Rectified-right rays map into the SWIR frame through the rig rotation.
    right_rect = _warp_to_rectified(
        right, rig.swir, geom.right_intrinsics, rig.rotation @ r_rect.T
    )
    return left_rect, right_rect, geom


def _warp_to_rectified(
    image: np.ndarray,
    k_src: Pinhole,
    k_rect: Pinhole,
    ray_rotation: np.ndarray,
) -> np.ndarray:
    """Inverse-warp an image into the rectified frame by bilinear resampling.

    ``ray_rotation`` maps rectified-frame ray directions into the source
    camera frame.
    """
    h, w = k_rect.height, k_rect.width
    xg, yg = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    rays = np.stack(
        [(xg - k_rect.cx) / k_rect.fx, (yg - k_rect.cy) / k_rect.fy, np.ones_like(xg)], axis=-1
    )
    src = rays @ np.asarray(ray_rotation).T
    u = k_src.fx * src[..., 0] / src[..., 2] + k_src.cx
    v = k_src.fy * src[..., 1] / src[..., 2] + k_src.cy
    # Exact pass-through when the mapping is the identity (parallel rigs).
    if np.allclose(u, xg, atol=1e-9) and np.allclose(v, yg, atol=1e-9):
        return np.asarray(image, dtype=np.float64).copy()
    # NaN marks rectified pixels with no source data; the matcher skips them.
    out, inside = bilinear_sample(np.asarray(image, dtype=np.float64), u, v)
    return np.where(inside, out, np.nan)


# ---------------------------------------------------------------------------
# Census matching
# ---------------------------------------------------------------------------


@dataclass
class DisparityMap:
    """Sub-pixel disparities with validity and the winning match cost."""

    width: int
    height: int
    disparity: np.ndarray
    valid: np.ndarray
    cost: np.ndarray
    search_range: tuple[int, int] = (0, 0)

    def __post_init__(self):
        self.disparity = np.asarray(self.disparity, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        self.cost = np.asarray(self.cost, dtype=np.float64)
        for name, arr in (("disparity", self.disparity), ("valid", self.valid), ("cost", self.cost)):
            if arr.shape != (self.height, self.width):
                raise ValidationError(f"DisparityMap {name} shape mismatch")
        d = self.disparity[self.valid]
        if d.size and (d.min() < 0 or d.min() < self.search_range[0] - 0.5 or d.max() > self.search_range[1] + 0.5):
            raise ValidationError("valid disparities fall outside the search range")


def census_transform(image: np.ndarray, window: tuple[int, int] = DEFAULT_WINDOW) -> np.ndarray:
    """Census bit string per pixel: each bit is (neighbor < center).

    Window is (width, height); up to 64 comparisons fit the uint64 output.
    Strictly monotone intensity maps leave the transform unchanged.
    """
    wx, wy = window
    if wx % 2 == 0 or wy % 2 == 0:
        raise ContractError("census window sides must be odd")
    if wx * wy - 1 > 64:
        raise ContractError("census window exceeds 64 comparison bits")
    rx, ry = wx // 2, wy // 2
    img = np.asarray(image, dtype=np.float64)
    padded = np.pad(img, ((ry, ry), (rx, rx)), mode="edge")
    h, w = img.shape
    code = np.zeros((h, w), dtype=np.uint64)
    bit = np.uint64(0)
    one = np.uint64(1)
    for dy in range(-ry, ry + 1):
        for dx in range(-rx, rx + 1):
            if dx == 0 and dy == 0:
                continue
            neighbor = padded[ry + dy : ry + dy + h, rx + dx : rx + dx + w]
            code |= (neighbor < img).astype(np.uint64) << bit
            bit += one
    return code


def _popcount64(v: np.ndarray) -> np.ndarray:
    v = v - ((v >> np.uint64(1)) & np.uint64(0x5555555555555555))
    v = (v & np.uint64(0x3333333333333333)) + ((v >> np.uint64(2)) & np.uint64(0x3333333333333333))
    v = (v + (v >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return ((v * np.uint64(0x0101010101010101)) >> np.uint64(56)).astype(np.uint8)


def match_stereo(
    left: np.ndarray,
    right: np.ndarray,
    search_range: tuple[int, int] = (0, 48),
    window: tuple[int, int] = DEFAULT_WINDOW,
    lr_threshold: float = 1.0,
    aggregation: int = 2,
    subpixel: str = "zncc",
) -> DisparityMap:
    """Census-Hamming winner-take-all matching with parabolic sub-pixel refinement.

    Hamming costs are box-aggregated over a (2*aggregation+1)^2 support
    before the winner-take-all pass.  The integer winner always comes from
    the census cost (this is what carries the cross-modal robustness); the
    parabola is then fit either on the census cost itself
    (``subpixel="census"``) or, by default, on a windowed zero-mean NCC cost
    evaluated at the winner and its two neighbors (``subpixel="zncc"``).
    The quantized census cost pixel-locks the parabola by ~0.1 px, which the
    continuous NCC cost avoids; NCC normalization keeps the refinement exact
    under per-image affine intensity changes.  Left-right inconsistent
    pixels (occlusions, ambiguous texture) are marked invalid rather than
    raising.  Ties in the cost volume resolve toward the smallest disparity.
    """
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.shape != right.shape or left.ndim != 2:
        raise ContractError("left/right images must share a 2-D shape")
    d_lo, d_hi = int(search_range[0]), int(search_range[1])
    if d_lo < 0 or d_hi < d_lo:
        raise ContractError("search range must satisfy 0 <= lo <= hi")

    h, w = left.shape
    rx, ry = window[0] // 2, window[1] // 2
    # NaNs mark pixels without data (e.g. rectification borders); any window
    # touching one is untrustworthy on that side.
    left_nan = ~np.isfinite(left)
    right_nan = ~np.isfinite(right)
    left_ok = ~_window_any(left_nan, rx, ry)
    right_ok = ~_window_any(right_nan, rx, ry)
    left = np.where(left_nan, 0.0, left)
    right = np.where(right_nan, 0.0, right)
    cl = census_transform(left, window)
    cr = census_transform(right, window)

    n_d = d_hi - d_lo + 1
    big = np.float64(1e9)
    cost = np.full((h, w, n_d), big)
    for k in range(n_d):
        d = d_lo + k
        if d < w:
            c = _popcount64(cl[:, d:] ^ cr[:, : w - d]).astype(np.float64)
            cost[:, d:, k] = np.where(right_ok[:, : w - d], c, big)
    if aggregation > 0:
        cost = _box_aggregate(cost, aggregation, big)

    best = np.argmin(cost, axis=2)
    best_cost = np.take_along_axis(cost, best[..., None], axis=2)[..., 0]

    # Parabolic refinement on the integer winner where both neighbors exist.
    disp = (d_lo + best).astype(np.float64)
    interior = (best > 0) & (best < n_d - 1) & (best_cost < big)
    if subpixel == "zncc":
        refine = _zncc_volume(left, right, d_lo, n_d, (rx, ry))
    elif subpixel == "census":
        refine = cost
    else:
        raise ContractError("subpixel must be 'zncc' or 'census'")
    iy, ix = np.nonzero(interior)
    if iy.size:
        k = best[iy, ix]
        c0 = refine[iy, ix, k - 1]
        c1 = refine[iy, ix, k]
        c2 = refine[iy, ix, k + 1]
        usable = (c0 < big) & (c2 < big)
        denom = c0 + c2 - 2.0 * c1
        good = usable & (denom > 0)
        delta = np.where(good, 0.5 * (c0 - c2) / np.where(good, denom, 1.0), 0.0)
        disp[iy, ix] += np.clip(delta, -0.5, 0.5)

    # Right-view winner from the same volume: cost_R(x, d) = cost_L(x + d, d).
    cost_r = np.full_like(cost, big)
    for k in range(n_d):
        d = d_lo + k
        if d < w:
            cost_r[:, : w - d, k] = cost[:, d:, k]
    best_r = d_lo + np.argmin(cost_r, axis=2)

    xs = np.arange(w)[None, :]
    xr = xs - np.rint(disp).astype(np.intp)
    reachable = xr >= 0
    xr_safe = np.clip(xr, 0, w - 1)
    d_right = np.take_along_axis(best_r, xr_safe, axis=1)
    consistent = reachable & (np.abs(disp - d_right) <= lr_threshold)

    valid = consistent & (best_cost < big) & left_ok
    valid[:ry, :] = False
    valid[h - ry :, :] = False
    valid[:, :rx] = False
    valid[:, w - rx :] = False
    valid &= (xs - disp) >= rx  # right-view window must fit too

    disp = np.where(valid, disp, 0.0)
    return DisparityMap(w, h, disp, valid, np.where(valid, best_cost, 0.0), (d_lo, d_hi))


def _box_mean2d(img: np.ndarray, radius: int | tuple[int, int]) -> np.ndarray:
    """Mean over a rectangular window truncated at borders."""
    rx, ry = (radius, radius) if isinstance(radius, int) else radius
    h, w = img.shape
    pad = np.zeros((h + 1, w + 1))
    np.cumsum(np.cumsum(img, axis=0), axis=1, out=pad[1:, 1:])
    y0 = np.clip(np.arange(h) - ry, 0, h)
    y1 = np.clip(np.arange(h) + ry + 1, 0, h)
    x0 = np.clip(np.arange(w) - rx, 0, w)
    x1 = np.clip(np.arange(w) + rx + 1, 0, w)
    total = pad[y1[:, None], x1[None, :]] - pad[y0[:, None], x1[None, :]] \
        - pad[y1[:, None], x0[None, :]] + pad[y0[:, None], x0[None, :]]
    count = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return total / count


def _zncc_volume(
    left: np.ndarray, right: np.ndarray, d_lo: int, n_d: int, radius: tuple[int, int]
) -> np.ndarray:
    """1 - windowed zero-mean NCC per disparity layer (continuous match cost)."""
    h, w = left.shape
    out = np.full((h, w, n_d), 2.0)
    for k in range(n_d):
        d = d_lo + k
        if d >= w:
            continue
        lw = left[:, d:]
        rw = right[:, : w - d]
        ml = _box_mean2d(lw, radius)
        mr = _box_mean2d(rw, radius)
        cov = _box_mean2d(lw * rw, radius) - ml * mr
        vl = _box_mean2d(lw * lw, radius) - ml * ml
        vr = _box_mean2d(rw * rw, radius) - mr * mr
        den = np.sqrt(np.maximum(vl * vr, 1e-20))
        out[:, d:, k] = 1.0 - cov / den
    return out


def normalize_local_contrast(image: np.ndarray, radius: int = 6) -> np.ndarray:
    """Divide out the local mean to suppress smooth illumination envelopes.

    Block matchers key on local structure; the slowly varying radiometric
    envelope (response curves, inverse-square falloff) differs between the
    two cameras and biases windowed correlation, so the pipeline flattens it
    before matching.  NaN no-data pixels stay NaN.
    """
    img = np.asarray(image, dtype=np.float64)
    nan = ~np.isfinite(img)
    fill = float(np.nanmean(img)) if np.any(~nan) else 0.0
    filled = np.where(nan, fill, img)
    normalized = filled / np.maximum(_box_mean2d(filled, radius), 1e-12)
    return np.where(nan, np.nan, normalized)


def _box_aggregate(cost: np.ndarray, radius: int, big: float) -> np.ndarray:
    """Sum costs over a square support, propagating no-data entries."""
    h, w, n_d = cost.shape
    invalid = cost >= big
    filled = np.where(invalid, 0.0, cost)
    pad = np.zeros((h + 1, w + 1, n_d))
    np.cumsum(np.cumsum(filled, axis=0), axis=1, out=pad[1:, 1:])
    bad = np.zeros((h + 1, w + 1, n_d))
    np.cumsum(np.cumsum(invalid.astype(np.float64), axis=0), axis=1, out=bad[1:, 1:])
    r = radius
    y0 = np.clip(np.arange(h) - r, 0, h)
    y1 = np.clip(np.arange(h) + r + 1, 0, h)
    x0 = np.clip(np.arange(w) - r, 0, w)
    x1 = np.clip(np.arange(w) + r + 1, 0, w)

    def window_sum(table):
        return (
            table[y1[:, None], x1[None, :]]
            - table[y0[:, None], x1[None, :]]
            - table[y1[:, None], x0[None, :]]
            + table[y0[:, None], x0[None, :]]
        )

    total = window_sum(pad)
    n_bad = window_sum(bad)
    return np.where(n_bad > 0, big, total)


def _window_any(mask: np.ndarray, rx: int, ry: int) -> np.ndarray:
    """True where any pixel of the (2rx+1) x (2ry+1) window is set."""
    padded = np.pad(mask, ((ry, ry), (rx, rx)), mode="constant", constant_values=False)
    out = np.zeros_like(mask)
    h, w = mask.shape
    for dy in range(2 * ry + 1):
        for dx in range(2 * rx + 1):
            out |= padded[dy : dy + h, dx : dx + w]
    return out


def filter_disparity_speckles(
    disp: DisparityMap, radius: int = 1, tol_px: float = 1.0, min_neighbors: int = 5
) -> DisparityMap:
    """Invalidate pixels inconsistent with the median of their valid neighbors.

    A light post-hoc confidence pass for the pipeline: isolated mismatches
    and depth-edge transition pixels deviate from their neighborhood median
    and get dropped rather than corrected.
    """
    h, w = disp.height, disp.width
    d = np.where(disp.valid, disp.disparity, np.nan)
    stack = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = np.full((h, w), np.nan)
            ys0, ys1 = max(0, dy), min(h, h + dy)
            xs0, xs1 = max(0, dx), min(w, w + dx)
            shifted[ys0:ys1, xs0:xs1] = d[ys0 - dy : ys1 - dy, xs0 - dx : xs1 - dx]
            stack.append(shifted)
    stack = np.stack(stack)
    count = np.sum(np.isfinite(stack), axis=0)
    import warnings as _warnings

    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN windows
        med = np.nanmedian(stack, axis=0)
    keep = disp.valid & (count >= min_neighbors) & (np.abs(disp.disparity - med) <= tol_px)
    return DisparityMap(
        w, h, np.where(keep, disp.disparity, 0.0), keep, disp.cost, disp.search_range
    )


# ---------------------------------------------------------------------------
# Triangulation and depth warping
# ---------------------------------------------------------------------------


def disparity_to_depth(
    disp: DisparityMap,
    focal_px: float,
    baseline_m: float,
    min_disparity: float = DEFAULT_MIN_DISPARITY,
    disparity_offset: float = 0.0,
) -> DepthMap:
    """Triangulate: Z = f * b / d.  Disparities at or below min_disparity go invalid."""
    if focal_px <= 0 or baseline_m <= 0:
        raise DomainError("focal length and baseline must be > 0")
    d = disp.disparity + disparity_offset
    ok = disp.valid & (d > min_disparity)
    depth = np.where(ok, focal_px * baseline_m / np.where(ok, d, 1.0), 0.0)
    return DepthMap(disp.width, disp.height, depth, ok)


def depth_to_disparity(depth: DepthMap, focal_px: float, baseline_m: float) -> np.ndarray:
    """Geometric disparity of a depth map (inverse of disparity_to_depth)."""
    with np.errstate(divide="ignore"):
        return np.where(depth.valid, focal_px * baseline_m / np.where(depth.valid, depth.depth, 1.0), 0.0)


def warp_depth(
    src: DepthMap,
    k_src: Pinhole,
    rotation: np.ndarray,
    translation: np.ndarray,
    k_dst: Pinhole,
) -> DepthMap:
    """Reproject a depth map into another camera: unproject, transform, splat.

    Colliding points keep the nearest depth (z-buffer); unhit destination
    pixels stay invalid.  No hole filling is performed.
    """
    ys, xs = np.nonzero(src.valid)
    out = np.full((k_dst.height, k_dst.width), np.inf)
    if ys.size:
        pts = k_src.unproject(xs.astype(np.float64), ys.astype(np.float64), src.depth[ys, xs])
        dst = pts @ np.asarray(rotation).T + np.asarray(translation).reshape(3)
        u, v, z = k_dst.project(dst)
        keep = (z > 0) & np.isfinite(u) & np.isfinite(v)
        ui = np.rint(u[keep]).astype(np.intp)
        vi = np.rint(v[keep]).astype(np.intp)
        zk = z[keep]
        inside = (ui >= 0) & (ui < k_dst.width) & (vi >= 0) & (vi < k_dst.height)
        np.minimum.at(out, (vi[inside], ui[inside]), zk[inside])
    valid = np.isfinite(out)
    return DepthMap(k_dst.width, k_dst.height, np.where(valid, out, 0.0), valid)


def warp_depth_between(src: DepthMap, rig: CameraRig, src_camera: Camera, dst_camera: Camera) -> DepthMap:
    """Warp a depth map between the two rig views."""
    if src_camera == dst_camera:
        return src
    if src_camera == Camera.VNIR and dst_camera == Camera.SWIR:
        rot, t = rig.rotation, rig.translation
    elif src_camera == Camera.SWIR and dst_camera == Camera.VNIR:
        rot = rig.rotation.T
        t = -rig.rotation.T @ rig.translation
    else:
        raise ContractError(f"cannot warp between {src_camera} and {dst_camera}")
    return warp_depth(src, rig.intrinsics(src_camera), rot, t, rig.intrinsics(dst_camera))
