"""On-disk formats.

Cubes, stacks and maps are flat little-endian float32 payloads plus a JSON
sidecar describing layout; validity masks ride along as one-byte-per-pixel
files.  Spectral curves and device models serialize as JSON; Gaussian
parameter fields as two binary lattices plus a JSON axes sidecar.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .calibration import RadiometricResponse
from .core import Camera, DepthMap, ScanStack, SpectralCube, WavelengthGrid
from .depth import DisparityMap
from .errors import ValidationError
from .forward import Curve, GaussianField, IlluminantModel, SensorModel

LAYOUT = "row-major, band-fastest"


def write_json(path: Path | str, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: Path | str) -> dict:
    return json.loads(Path(path).read_text())


def _write_f32(path: Path, arr: np.ndarray):
    np.ascontiguousarray(arr, dtype="<f4").tofile(path)


def _read_f32(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise ValidationError(f"{path}: expected {expected} float32 values, found {arr.size}")
    return arr.reshape(shape).astype(np.float64)


def _write_mask(path: Path, mask: np.ndarray):
    np.ascontiguousarray(mask, dtype=np.uint8).tofile(path)


def _read_mask(path: Path, shape: tuple[int, int]) -> np.ndarray:
    arr = np.fromfile(path, dtype=np.uint8)
    if arr.size != shape[0] * shape[1]:
        raise ValidationError(f"{path}: mask size mismatch")
    return arr.reshape(shape).astype(bool)


# ---------------------------------------------------------------------------
# Cubes, stacks, depth and disparity maps
# ---------------------------------------------------------------------------


def save_cube(base: Path | str, cube: SpectralCube):
    base = Path(base)
    _write_f32(base.with_suffix(".f32"), cube.data)
    sidecar = {
        "width": cube.width,
        "height": cube.height,
        "bands": list(cube.grid.bands),
        "camera_tag": cube.grid.camera.value,
        "layout": LAYOUT,
        "dtype": "<f4",
    }
    if cube.grid.band_sources is not None:
        sidecar["band_sources"] = [s.value for s in cube.grid.band_sources]
    if cube.valid is not None:
        _write_mask(base.with_suffix(".valid.u8"), cube.valid)
        sidecar["valid_mask"] = base.with_suffix(".valid.u8").name
    write_json(base.with_suffix(".json"), sidecar)


def load_cube(base: Path | str) -> SpectralCube:
    base = Path(base)
    meta = read_json(base.with_suffix(".json"))
    sources = meta.get("band_sources")
    grid = WavelengthGrid(
        tuple(meta["bands"]),
        Camera(meta["camera_tag"]),
        tuple(Camera(s) for s in sources) if sources else None,
    )
    shape = (meta["height"], meta["width"], grid.count)
    data = _read_f32(base.with_suffix(".f32"), shape)
    valid = None
    if "valid_mask" in meta:
        valid = _read_mask(base.parent / meta["valid_mask"], shape[:2])
    return SpectralCube(meta["width"], meta["height"], grid, np.maximum(data, 0.0), valid=valid)


def save_stack(base: Path | str, stack: ScanStack):
    base = Path(base)
    _write_f32(base.with_suffix(".f32"), stack.data)
    sidecar = {
        "width": stack.width,
        "height": stack.height,
        "angles": list(stack.angles),
        "camera_tag": stack.camera.value,
        "layout": LAYOUT,
        "dtype": "<f4",
    }
    if stack.valid is not None:
        _write_mask(base.with_suffix(".valid.u8"), stack.valid)
        sidecar["valid_mask"] = base.with_suffix(".valid.u8").name
    write_json(base.with_suffix(".json"), sidecar)


def load_stack(base: Path | str) -> ScanStack:
    base = Path(base)
    meta = read_json(base.with_suffix(".json"))
    angles = tuple(meta["angles"])
    shape = (meta["height"], meta["width"], len(angles))
    data = _read_f32(base.with_suffix(".f32"), shape)
    valid = None
    if "valid_mask" in meta:
        valid = _read_mask(base.parent / meta["valid_mask"], shape[:2])
    return ScanStack(
        meta["width"],
        meta["height"],
        angles,
        np.maximum(data, 0.0),
        camera=Camera(meta["camera_tag"]),
        valid=valid,
    )


def save_depth(base: Path | str, depth: DepthMap):
    base = Path(base)
    _write_f32(base.with_suffix(".f32"), depth.depth)
    _write_mask(base.with_suffix(".valid.u8"), depth.valid)
    write_json(
        base.with_suffix(".json"),
        {"width": depth.width, "height": depth.height, "kind": "depth_m", "dtype": "<f4"},
    )


def load_depth(base: Path | str) -> DepthMap:
    base = Path(base)
    meta = read_json(base.with_suffix(".json"))
    shape = (meta["height"], meta["width"])
    depth = _read_f32(base.with_suffix(".f32"), shape)
    valid = _read_mask(base.with_suffix(".valid.u8"), shape)
    return DepthMap(meta["width"], meta["height"], np.where(valid, depth, 0.0), valid)


def save_disparity(base: Path | str, disp: DisparityMap):
    base = Path(base)
    _write_f32(base.with_suffix(".f32"), disp.disparity)
    _write_f32(base.with_suffix(".cost.f32"), disp.cost)
    _write_mask(base.with_suffix(".valid.u8"), disp.valid)
    write_json(
        base.with_suffix(".json"),
        {
            "width": disp.width,
            "height": disp.height,
            "kind": "disparity_px",
            "search_range": list(disp.search_range),
            "dtype": "<f4",
        },
    )


def load_disparity(base: Path | str) -> DisparityMap:
    base = Path(base)
    meta = read_json(base.with_suffix(".json"))
    shape = (meta["height"], meta["width"])
    disparity = _read_f32(base.with_suffix(".f32"), shape)
    cost = _read_f32(base.with_suffix(".cost.f32"), shape)
    valid = _read_mask(base.with_suffix(".valid.u8"), shape)
    return DisparityMap(
        meta["width"], meta["height"], np.where(valid, disparity, 0.0), valid, cost,
        tuple(meta.get("search_range", (0, 0))),
    )


def save_labels(base: Path | str, labels: np.ndarray):
    base = Path(base)
    np.ascontiguousarray(labels, dtype=np.uint8).tofile(base.with_suffix(".u8"))
    write_json(
        base.with_suffix(".json"),
        {"width": labels.shape[1], "height": labels.shape[0], "kind": "labels", "dtype": "u1"},
    )


def load_labels(base: Path | str) -> np.ndarray:
    base = Path(base)
    meta = read_json(base.with_suffix(".json"))
    arr = np.fromfile(base.with_suffix(".u8"), dtype=np.uint8)
    return arr.reshape(meta["height"], meta["width"])


# ---------------------------------------------------------------------------
# Single-pixel spectra and fitted-parameter dumps (CSV)
# ---------------------------------------------------------------------------


def save_spectrum_csv(path: Path | str, bands, reflectance):
    bands = np.asarray(bands, dtype=np.float64).ravel()
    reflectance = np.asarray(reflectance, dtype=np.float64).ravel()
    if bands.size != reflectance.size:
        raise ValidationError("bands and reflectance lengths differ")
    lines = ["wavelength_nm,reflectance"]
    lines += [f"{b:.6g},{r:.8g}" for b, r in zip(bands, reflectance)]
    Path(path).write_text("\n".join(lines) + "\n")


def save_fits_csv(path: Path | str, rows):
    """Rows of (x, y, Z, lambda, mu_deg, sigma_deg, amplitude, residual)."""
    lines = ["x,y,Z,lambda,mu_deg,sigma_deg,amplitude,residual"]
    for row in rows:
        lines.append(",".join(f"{v:.8g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Device models and fields
# ---------------------------------------------------------------------------


def _curve_payload(curve: Curve) -> dict:
    return {
        "wavelength_nm": list(curve.wavelengths),
        "value": list(curve.values),
        "interpolation": "linear",
        "extrapolation": curve.extrapolation,
    }


def _curve_from_payload(payload: dict) -> Curve:
    return Curve(
        tuple(payload["wavelength_nm"]),
        tuple(payload["value"]),
        extrapolation=payload.get("extrapolation", "clamp"),
    )


def save_illuminant(path: Path | str, illum: IlluminantModel):
    write_json(
        path,
        {
            "transmittance": _curve_payload(illum.transmittance),
            "mirror_reflectance": _curve_payload(illum.mirror_reflectance),
            "emission": _curve_payload(illum.emission),
        },
    )


def load_illuminant(path: Path | str) -> IlluminantModel:
    meta = read_json(path)
    return IlluminantModel(
        _curve_from_payload(meta["transmittance"]),
        _curve_from_payload(meta["mirror_reflectance"]),
        _curve_from_payload(meta["emission"]),
    )


def save_sensor(path: Path | str, sensor: SensorModel):
    write_json(
        path,
        {
            "saturation": sensor.saturation,
            "noise_fraction": sensor.noise_fraction,
            "exposures": list(sensor.exposures),
            "sensitivity": {
                cam.value: _curve_payload(curve) for cam, curve in sensor.sensitivity.items()
            },
        },
    )


def load_sensor(path: Path | str) -> SensorModel:
    meta = read_json(path)
    return SensorModel(
        sensitivity={
            Camera(cam): _curve_from_payload(p) for cam, p in meta["sensitivity"].items()
        },
        saturation=meta["saturation"],
        noise_fraction=meta["noise_fraction"],
        exposures=tuple(meta["exposures"]),
    )


def save_field(base: Path | str, fld: GaussianField):
    base = Path(base)
    _write_f32(base.with_suffix(".mu.f32"), fld.mu)
    _write_f32(base.with_suffix(".sigma.f32"), fld.sigma)
    write_json(
        base.with_suffix(".json"),
        {
            "x_px": list(map(float, fld.xs)),
            "y_px": list(map(float, fld.ys)),
            "z_m": list(map(float, fld.zs)),
            "lambda_nm": list(map(float, fld.lams)),
            "interpolation": {"xy": "linear", "z": "monotone-cubic", "lambda": "monotone-cubic"},
            "dtype": "<f4",
        },
    )


def load_field(base: Path | str) -> GaussianField:
    base = Path(base)
    meta = read_json(base.with_suffix(".json"))
    shape = (
        len(meta["x_px"]),
        len(meta["y_px"]),
        len(meta["z_m"]),
        len(meta["lambda_nm"]),
    )
    mu = _read_f32(base.with_suffix(".mu.f32"), shape)
    sigma = _read_f32(base.with_suffix(".sigma.f32"), shape)
    return GaussianField(meta["x_px"], meta["y_px"], meta["z_m"], meta["lambda_nm"], mu, sigma)


def save_response(path: Path | str, response: RadiometricResponse):
    write_json(
        path,
        {
            cam.value: {
                "bands": list(response.grids[cam].bands),
                "value": [float(v) for v in response.values[cam]],
            }
            for cam in response.values
        },
    )


def load_response(path: Path | str) -> RadiometricResponse:
    meta = read_json(path)
    values = {}
    grids = {}
    for cam_name, entry in meta.items():
        cam = Camera(cam_name)
        grids[cam] = WavelengthGrid(tuple(entry["bands"]), cam)
        values[cam] = np.asarray(entry["value"], dtype=np.float64)
    return RadiometricResponse(values, grids)
