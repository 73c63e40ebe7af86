"""Synthetic ground-truth scenes and dataset rendering.

Scenes are built in world space (the VNIR camera frame) from fronto-parallel
slabs carrying material layouts, then projected into both camera views by
exact ray-plane intersection, so the two views and the rig stay geometrically
consistent and the ground truth is analytic.  Surface textures and layouts
are evaluated at the 3-D hit points, which anchors them to the surface: both
cameras see the same pattern, which is what makes the synthesized stereo
pairs matchable.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .core import (
    Camera,
    CameraRig,
    DepthMap,
    SpectralCube,
    WavelengthGrid,
    spectral_angle,
    swir_grid,
    union_grid,
    vnir_grid,
)
from .errors import ContractError, ValidationError
from .forward import GaussianField, IlluminantModel, SensorModel, hdr_fuse, render_scan_stack
from .fusion import ChromaticBlurModel
from . import fileio

DEFAULT_ALBEDO_TEXTURE = 0.10
TEXTURE_SCALE_M = 0.005


def master_grid() -> WavelengthGrid:
    """Union of the two camera grids; scenes define spectra on this grid."""
    return union_grid(vnir_grid(), swir_grid())


@dataclass
class Scene:
    """Ground truth: latent sharp reflectance and depth per camera view."""

    rig: CameraRig
    grid: WavelengthGrid
    reflectance: dict[Camera, np.ndarray]
    depths: dict[Camera, DepthMap]
    labels: dict[Camera, np.ndarray]
    blur: ChromaticBlurModel | None = None
    seed: int | None = None
    meta: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        for camera in (Camera.VNIR, Camera.SWIR):
            cam = self.rig.intrinsics(camera)
            refl = np.asarray(self.reflectance[camera], dtype=np.float64)
            if refl.shape != (cam.height, cam.width, self.grid.count):
                raise ValidationError(f"{camera.value} reflectance shape mismatch")
            if refl.min() < 0 or refl.max() > 1:
                raise ValidationError("scene reflectance must lie in [0, 1]")
            self.reflectance[camera] = refl
            d = self.depths[camera]
            if (d.width, d.height) != (cam.width, cam.height):
                raise ValidationError(f"{camera.value} depth dimensions mismatch")

    def latent_cube(self, camera: Camera) -> SpectralCube:
        cam = self.rig.intrinsics(camera)
        return SpectralCube(
            cam.width,
            cam.height,
            self.grid,
            self.reflectance[camera].copy(),
            valid=self.depths[camera].valid.copy(),
        )

    def observed_cube(self, camera: Camera) -> SpectralCube:
        """What the optics deliver: the latent cube, chromatically blurred if modeled."""
        cube = self.latent_cube(camera)
        if self.blur is not None:
            cube = self.blur.apply(cube)
        return cube


# ---------------------------------------------------------------------------
# World-space machinery
# ---------------------------------------------------------------------------


def _smooth_noise(xw: np.ndarray, yw: np.ndarray, scale_m: float, seed: int) -> np.ndarray:
    """Deterministic smooth random field over world coordinates, range [-1, 1].

    Values come from a hashed integer lattice blended with a smoothstep, so
    any two views sampling the same surface point agree exactly.
    """
    gx = np.floor(xw / scale_m).astype(np.int64)
    gy = np.floor(yw / scale_m).astype(np.int64)
    fx = xw / scale_m - gx
    fy = yw / scale_m - gy

    def lattice(ix, iy):
        h = ix * np.int64(374761393) + iy * np.int64(668265263) + np.int64(seed) * np.int64(1274126177)
        h = (h ^ (h >> np.int64(13))) * np.int64(1274126177)
        h ^= h >> np.int64(16)
        return (h & np.int64(0xFFFFFFF)).astype(np.float64) / float(0xFFFFFFF) * 2.0 - 1.0

    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    v00 = lattice(gx, gy)
    v10 = lattice(gx + 1, gy)
    v01 = lattice(gx, gy + 1)
    v11 = lattice(gx + 1, gy + 1)
    return (
        v00 * (1 - sx) * (1 - sy)
        + v10 * sx * (1 - sy)
        + v01 * (1 - sx) * sy
        + v11 * sx * sy
    )


def _camera_rays(rig: CameraRig, camera: Camera):
    """Ray origins (camera center) and directions in the VNIR (world) frame."""
    cam = rig.intrinsics(camera)
    xg, yg = np.meshgrid(
        np.arange(cam.width, dtype=np.float64), np.arange(cam.height, dtype=np.float64)
    )
    dirs = np.stack(
        [(xg - cam.cx) / cam.fx, (yg - cam.cy) / cam.fy, np.ones_like(xg)], axis=-1
    )
    if camera == Camera.SWIR:
        origin = rig.swir_center
        dirs = dirs @ rig.rotation  # directions: d_world = R^T @ d_cam
    else:
        origin = np.zeros(3)
        dirs = dirs
    return origin, dirs


def _intersect_slabs(rig: CameraRig, camera: Camera, slabs):
    """First-hit ray casting against fronto-parallel rectangles.

    Each slab is (z, x_lo, x_hi, y_lo, y_hi) in world coordinates.  Returns
    (depth along the camera axis, slab index, world hit points); rays missing
    every slab come back invalid (index -1).  Slabs are tested nearest-first,
    which resolves occlusion exactly for this geometry.
    """
    origin, dirs = _camera_rays(rig, camera)
    h, w = dirs.shape[:2]
    depth = np.zeros((h, w))
    index = np.full((h, w), -1, dtype=np.int64)
    hits = np.zeros((h, w, 3))
    order = np.argsort([s[0] for s in slabs])
    for k in order:
        z_k, x_lo, x_hi, y_lo, y_hi = slabs[k]
        with np.errstate(divide="ignore"):
            s = (z_k - origin[2]) / dirs[..., 2]
        x_world = origin[0] + s * dirs[..., 0]
        y_world = origin[1] + s * dirs[..., 1]
        hit = (
            (index < 0)
            & (s > 0)
            & (x_world >= x_lo)
            & (x_world < x_hi)
            & (y_world >= y_lo)
            & (y_world < y_hi)
        )
        if not np.any(hit):
            continue
        index[hit] = k
        depth[hit] = s[hit]  # unit-z ray parameterization: s is camera-frame depth
        pts = origin + s[..., None] * dirs
        hits[hit] = pts[hit]
    return depth, index, hits


def _apply_texture(
    base: np.ndarray, hits: np.ndarray, ok: np.ndarray, amplitude: float, seed: int
) -> np.ndarray:
    """Multiplicative flat-spectrum albedo texture anchored to the surface."""
    if amplitude <= 0:
        return base
    noise = _smooth_noise(hits[..., 0], hits[..., 1], TEXTURE_SCALE_M, seed)
    gain = np.where(ok, 1.0 + amplitude * noise, 1.0)
    return np.clip(base * gain[..., None], 0.0, 1.0)


def _build_views(
    rig: CameraRig,
    grid: WavelengthGrid,
    slabs: list[tuple[float, float, float]],
    material_of,
    spectra: np.ndarray,
    texture_amplitude: float,
    seed: int,
):
    """Project a slab world into both views; returns reflectance/depth/label dicts."""
    reflectance = {}
    depths = {}
    labels = {}
    for camera in (Camera.VNIR, Camera.SWIR):
        depth, index, hits = _intersect_slabs(rig, camera, slabs)
        ok = index >= 0
        mat = material_of(hits, index)
        mat = np.where(ok, mat, 0)
        refl = spectra[mat]
        refl = np.where(ok[..., None], refl, 0.0)
        refl = _apply_texture(refl, hits, ok, texture_amplitude, seed)
        cam = rig.intrinsics(camera)
        reflectance[camera] = refl
        depths[camera] = DepthMap(cam.width, cam.height, np.where(ok, depth, 0.0), ok)
        labels[camera] = mat.astype(np.uint8)
    return reflectance, depths, labels


# ---------------------------------------------------------------------------
# Scene generators
# ---------------------------------------------------------------------------


def make_staircase_scene(
    rig: CameraRig,
    levels: int = 5,
    step_height_m: float = 0.020,
    base_depth_m: float = 0.40,
    reflectance_level: float = 0.8,
    texture_amplitude: float = 0.0,
    seed: int = 0,
    orientation: str = "rows",
    grid: WavelengthGrid | None = None,
) -> Scene:
    """Fronto-parallel stair treads at known depth increments, flat spectrum.

    With ``orientation="rows"`` the treads stack top to bottom across the
    view (depth edges are horizontal), so an x-baseline stereo pair sees
    every tread without occlusion; ``"columns"`` arranges them left to
    right instead.  The default surface is uniform; a gentle multiplicative
    albedo texture can be enabled for stereo pipelines that need photometric
    structure.
    """
    if levels < 2:
        raise ContractError("a staircase needs at least 2 levels")
    if step_height_m <= 0:
        raise ContractError("step height must be > 0")
    if orientation not in ("rows", "columns"):
        raise ContractError("orientation must be 'rows' or 'columns'")
    grid = grid or master_grid()
    cam = rig.vnir
    slabs = []
    step_depths = []
    if orientation == "rows":
        edges = np.linspace(0, cam.height, levels + 1)
        center, focal = cam.cy, cam.fy
    else:
        edges = np.linspace(0, cam.width, levels + 1)
        center, focal = cam.cx, cam.fx
    for k in range(levels):
        z_k = base_depth_m + k * step_height_m
        lo = (edges[k] - center) / focal * z_k
        hi = (edges[k + 1] - center) / focal * z_k
        if k == 0:
            lo = -np.inf
        if k == levels - 1:
            hi = np.inf
        if orientation == "rows":
            slabs.append((z_k, -np.inf, np.inf, lo, hi))
        else:
            slabs.append((z_k, lo, hi, -np.inf, np.inf))
        step_depths.append(z_k)

    spectra = np.full((levels, grid.count), reflectance_level)

    reflectance, depths, labels = _build_views(
        rig, grid, slabs, lambda hits, idx: idx, spectra, texture_amplitude, seed
    )
    return Scene(
        rig,
        grid,
        reflectance,
        depths,
        labels,
        seed=seed,
        meta={"kind": "staircase", "step_depths_m": step_depths, "step_height_m": step_height_m},
    )


def _bump_spectrum(rng: np.random.Generator, bands: np.ndarray) -> np.ndarray:
    """Clamped sum of 2-4 smooth Gaussian bumps across the full range."""
    n_bumps = rng.integers(2, 5)
    base = rng.uniform(0.15, 0.55)
    spec = np.full(bands.size, base)
    for _ in range(n_bumps):
        center = rng.uniform(bands[0], bands[-1])
        width = rng.uniform(80.0, 280.0)
        amp = rng.uniform(-0.35, 0.45)
        spec += amp * np.exp(-0.5 * ((bands - center) / width) ** 2)
    return np.clip(spec, 0.05, 0.95)


def make_patch_chart_scene(
    rig: CameraRig,
    patches: int = 24,
    seed: int = 0,
    depth_m: float = 0.45,
    texture_amplitude: float = DEFAULT_ALBEDO_TEXTURE,
    min_pairwise_sam: float = 0.05,
    chart_fraction: tuple[float, float] = (0.66, 0.88),
    chart_center: tuple[float, float] = (0.5, 0.5),
    background_reflectance: float = 0.35,
    grid: WavelengthGrid | None = None,
    rough_spectra: bool = False,
) -> Scene:
    """A 4 x 6 patch chart on a fronto-parallel plane with seeded smooth spectra.

    The chart covers ``chart_fraction`` of the reference view (width, height
    fractions) centered at ``chart_center`` (view fractions), and sits on a
    neutral background plane at the same depth; offsetting the chart keeps
    all patches inside the stereo-covisible zone when disparities are large.
    The generator rejects near-duplicate spectra so every pair is at least
    ``min_pairwise_sam`` apart.  ``rough_spectra`` disables the smoothness
    assumption (per-band jitter) to stress regularized reconstruction.
    """
    grid = grid or master_grid()
    bands = grid.array
    rng = np.random.default_rng(seed)
    rows, cols = 4, max(1, int(np.ceil(patches / 4)))
    spectra = []
    attempts = 0
    while len(spectra) < patches:
        cand = _bump_spectrum(rng, bands)
        if rough_spectra:
            cand = np.clip(cand * (1.0 + rng.uniform(-0.2, 0.2, bands.size)), 0.02, 0.98)
        attempts += 1
        if attempts > 200 * patches:
            raise ValidationError("could not generate sufficiently distinct patch spectra")
        if all(spectral_angle(cand, s) >= min_pairwise_sam for s in spectra):
            spectra.append(cand)
    background = patches  # label reserved for off-chart pixels
    spectra.append(np.full(bands.size, background_reflectance))
    spectra = np.asarray(spectra)

    cam = rig.vnir
    half_w = chart_fraction[0] * cam.width / 2.0 / cam.fx * depth_m
    half_h = chart_fraction[1] * cam.height / 2.0 / cam.fy * depth_m
    cx_w = (chart_center[0] * cam.width - cam.cx) / cam.fx * depth_m
    cy_w = (chart_center[1] * cam.height - cam.cy) / cam.fy * depth_m
    slabs = [(depth_m, -np.inf, np.inf, -np.inf, np.inf)]

    def material_of(hits, idx):
        xw = hits[..., 0] - cx_w
        yw = hits[..., 1] - cy_w
        cx = np.clip(((xw + half_w) / (2 * half_w) * cols).astype(np.int64), 0, cols - 1)
        cy = np.clip(((yw + half_h) / (2 * half_h) * rows).astype(np.int64), 0, rows - 1)
        patch = np.minimum(cy * cols + cx, patches - 1)
        on_chart = (np.abs(xw) <= half_w) & (np.abs(yw) <= half_h)
        return np.where(on_chart, patch, background)

    reflectance, depths, labels = _build_views(
        rig, grid, slabs, material_of, spectra, texture_amplitude, seed
    )
    return Scene(
        rig,
        grid,
        reflectance,
        depths,
        labels,
        seed=seed,
        meta={
            "kind": "patch_chart",
            "patches": patches,
            "background_label": background,
            "patch_spectra": spectra[:patches].tolist(),
            "depth_m": depth_m,
            "chart_fraction": chart_fraction,
        },
    )


def default_material_pair(grid: WavelengthGrid) -> tuple[np.ndarray, np.ndarray]:
    """Two spectra that match in the visible range and split apart at 1450 nm.

    Mirrors the metamer-style fixture: nearly identical below 700 nm, with one
    material's reflectance dropping by >= 0.3 around 1450 nm.
    """
    bands = grid.array
    a = 0.62 + 0.05 * np.sin((bands - 450.0) / 300.0)
    drop = 0.40 / (1.0 + np.exp(-(bands - 1300.0) / 60.0))
    b = a - drop
    return np.clip(a, 0.0, 1.0), np.clip(b, 0.02, 1.0)


def make_two_material_scene(
    rig: CameraRig,
    spectrum_a: np.ndarray | None = None,
    spectrum_b: np.ndarray | None = None,
    split: str = "vertical",
    depth_m: float = 0.50,
    texture_amplitude: float = DEFAULT_ALBEDO_TEXTURE,
    seed: int = 0,
    grid: WavelengthGrid | None = None,
) -> Scene:
    """Two regions that look alike in the visible band but differ in the SWIR.

    Generation verifies the construction: visible-band (450-700 nm) angle
    below 0.02 rad between the two spectra, and an absolute reflectance gap
    of at least 0.3 at 1450 nm.
    """
    grid = grid or master_grid()
    bands = grid.array
    if spectrum_a is None or spectrum_b is None:
        spectrum_a, spectrum_b = default_material_pair(grid)
    spectrum_a = np.asarray(spectrum_a, dtype=np.float64)
    spectrum_b = np.asarray(spectrum_b, dtype=np.float64)
    if spectrum_a.size != bands.size or spectrum_b.size != bands.size:
        raise ContractError("material spectra must live on the scene grid")

    visible = bands <= 700.0
    vis_sam = spectral_angle(spectrum_a[visible], spectrum_b[visible])
    if vis_sam >= 0.02:
        raise ValidationError(f"visible-band angle {vis_sam:.3f} rad >= 0.02")
    j1450 = int(np.argmin(np.abs(bands - 1450.0)))
    gap = abs(float(spectrum_a[j1450] - spectrum_b[j1450]))
    if gap < 0.3:
        raise ValidationError(f"1450 nm reflectance gap {gap:.2f} < 0.3")

    if split not in ("vertical", "horizontal"):
        raise ContractError("split must be 'vertical' or 'horizontal'")
    slabs = [(depth_m, -np.inf, np.inf, -np.inf, np.inf)]
    axis = 0 if split == "vertical" else 1

    def material_of(hits, idx):
        return (hits[..., axis] >= 0.0).astype(np.int64)

    spectra = np.stack([spectrum_a, spectrum_b])
    reflectance, depths, labels = _build_views(
        rig, grid, slabs, material_of, spectra, texture_amplitude, seed
    )
    return Scene(
        rig,
        grid,
        reflectance,
        depths,
        labels,
        seed=seed,
        meta={
            "kind": "two_material",
            "split": split,
            "visible_sam": vis_sam,
            "gap_1450nm": gap,
            "spectrum_a": spectrum_a.tolist(),
            "spectrum_b": spectrum_b.tolist(),
        },
    )


# ---------------------------------------------------------------------------
# Dataset rendering
# ---------------------------------------------------------------------------


def render_dataset(
    scene: Scene,
    fields: dict[Camera, GaussianField],
    illum: IlluminantModel,
    sensor: SensorModel,
    angles: np.ndarray,
    exposures: list[float],
    out_dir,
    seed: int = 0,
    grids: dict[Camera, WavelengthGrid] | None = None,
    threads: int | None = None,
) -> dict:
    """Render multi-exposure sweeps for both cameras and write the dataset.

    Writes per-exposure raw stacks, the fused HDR stack, the latent ground
    truth cube and depths, label maps, and a manifest tying them together.
    Re-running with the same scene and seed reproduces the files bit-exactly.
    """
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if grids is None:
        grids = {Camera.VNIR: vnir_grid(), Camera.SWIR: swir_grid()}

    from .core import resample_cube

    manifest = {
        "scene_seed": scene.seed,
        "scene_kind": scene.meta.get("kind", "custom"),
        "exposures": [float(e) for e in exposures],
        "noise_fraction": sensor.noise_fraction,
        "angles": {"start": float(angles[0]), "stop": float(angles[-1]), "count": int(len(angles))},
        "rig": {
            "vnir": vars(scene.rig.vnir) | {},
            "swir": vars(scene.rig.swir) | {},
            "rotation": scene.rig.rotation.tolist(),
            "translation": scene.rig.translation.tolist(),
            "baseline_m": scene.rig.baseline,
        },
        "files": {},
        "meta": scene.meta,
    }

    files = manifest["files"]
    for cam_i, camera in enumerate((Camera.VNIR, Camera.SWIR)):
        observed = resample_cube(scene.observed_cube(camera), grids[camera])
        depth = scene.depths[camera]
        key = camera.value.lower()
        stack_names = []
        captures = []
        for exp_i, exposure in enumerate(exposures):
            stack = render_scan_stack(
                observed,
                depth,
                fields[camera],
                illum,
                sensor,
                angles,
                exposure=exposure,
                seed=seed * 1009 + cam_i * 101 + exp_i,
                threads=threads,
            )
            name = f"{key}_stack_e{exp_i}"
            fileio.save_stack(out / name, stack)
            stack_names.append(name)
            captures.append((stack, exposure))
        fused = hdr_fuse(captures, sensor.saturation)
        fileio.save_stack(out / f"{key}_hdr", fused)
        files[f"{key}_stacks"] = stack_names
        files[f"{key}_hdr"] = f"{key}_hdr"
        fileio.save_depth(out / f"gt_depth_{key}", depth)
        files[f"gt_depth_{key}"] = f"gt_depth_{key}"

    fileio.save_cube(out / "gt_cube", scene.latent_cube(Camera.VNIR))
    files["gt_cube"] = "gt_cube"
    fileio.save_labels(out / "gt_labels", scene.labels[Camera.VNIR])
    files["gt_labels"] = "gt_labels"
    fileio.write_json(out / "manifest.json", manifest)
    return manifest
