"""Synthetic device models: scan geometry, dispersion, and default curves.

These provide the ground truth the simulator renders through.  Both cameras'
parameter fields derive from one shared physical sweep: a point X is lit at
the galvo angle where the dispersed line for wavelength lam crosses it, so
corresponding pixels in the two views agree on the peak angle.  That shared
structure is what makes the synthesized stereo pairs matchable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, CameraRig, WavelengthGrid
from .forward import Curve, GaussianField, IlluminantModel, SensorModel

WAVELENGTH_MID_NM = 975.0
WAVELENGTH_HALF_SPAN_NM = 525.0


@dataclass(frozen=True)
class ScanGeometry:
    """Galvo pivot placement and prism dispersion for the synthetic truth.

    The galvo sits near the cameras (VNIR frame coordinates, meters); the
    dispersed line for wavelength lam leaves at horizontal angle
    theta + dispersion(lam).  Angular blur grows gently with wavelength and
    varies mildly across the image and with depth.
    """

    galvo_position: tuple[float, float, float] = (0.002, 0.0, 0.0)
    dispersion_span_deg: float = 10.0
    dispersion_curve_deg: float = 0.9
    sigma_base_deg: float = 0.24
    sigma_wavelength_deg: float = 0.10
    sigma_spatial_deg: float = 0.025
    sigma_depth_deg: float = 0.04

    def dispersion(self, lam):
        """Prism deflection offset (deg), strictly increasing in wavelength."""
        u = (np.asarray(lam, dtype=np.float64) - WAVELENGTH_MID_NM) / WAVELENGTH_HALF_SPAN_NM
        return self.dispersion_span_deg * u + self.dispersion_curve_deg * (u**2 - 1.0 / 3.0)

    def scan_angle_of(self, points_vnir: np.ndarray) -> np.ndarray:
        """Horizontal angle (deg) of 3D points as seen from the galvo pivot."""
        p = np.asarray(points_vnir, dtype=np.float64)
        g = np.asarray(self.galvo_position)
        return np.degrees(np.arctan2(p[..., 0] - g[0], p[..., 2] - g[2]))

    def peak_angle(self, points_vnir: np.ndarray, lam) -> np.ndarray:
        """Galvo angle at which wavelength lam is brightest at the given points."""
        return self.scan_angle_of(points_vnir) - np.asarray(self.dispersion(lam))

    def angular_sigma(self, x_norm, y_norm, z, lam) -> np.ndarray:
        v = (np.asarray(lam, dtype=np.float64) - 450.0) / 1050.0
        spatial = np.sin(2.0 * np.pi * (np.asarray(x_norm) + 0.3 * np.asarray(y_norm)))
        return (
            self.sigma_base_deg
            + self.sigma_wavelength_deg * v
            + self.sigma_spatial_deg * spatial
            + self.sigma_depth_deg * (np.asarray(z) - 0.5)
        )


def truth_field(
    rig: CameraRig,
    camera: Camera,
    geom: ScanGeometry,
    lam_range: tuple[float, float],
    zs: np.ndarray | None = None,
    nx: int = 7,
    ny: int = 5,
    nl: int = 16,
) -> GaussianField:
    """Sample the analytic scan geometry onto a lattice for one camera view."""
    cam = rig.intrinsics(camera)
    xs = np.linspace(0.0, cam.width - 1.0, nx)
    ys = np.linspace(0.0, cam.height - 1.0, ny)
    if zs is None:
        zs = np.linspace(0.30, 0.75, 6)
    zs = np.asarray(zs, dtype=np.float64)
    lams = np.linspace(lam_range[0], lam_range[1], nl)

    xg, yg, zg, lg = np.meshgrid(xs, ys, zs, lams, indexing="ij")
    pts = cam.unproject(xg, yg, zg)
    if camera == Camera.SWIR:
        pts = rig.swir_to_vnir(pts)
    mu = geom.peak_angle(pts, lg)
    sigma = geom.angular_sigma(
        xg / max(cam.width - 1.0, 1.0), yg / max(cam.height - 1.0, 1.0), zg, lg
    )
    return GaussianField(xs, ys, zs, lams, mu, sigma)


def truth_fields(
    rig: CameraRig,
    geom: ScanGeometry,
    grids: dict[Camera, WavelengthGrid],
    zs: np.ndarray | None = None,
    nl: int = 16,
) -> dict[Camera, GaussianField]:
    """Per-camera truth fields spanning each camera's reconstruction range."""
    out = {}
    for camera, grid in grids.items():
        lam = grid.array
        out[camera] = truth_field(rig, camera, geom, (lam[0], lam[-1]), zs=zs, nl=nl)
    return out


# ---------------------------------------------------------------------------
# Default radiometric curves
# ---------------------------------------------------------------------------


def _planck_relative(lam_nm: np.ndarray, temperature_k: float) -> np.ndarray:
    c2_nm_k = 1.4387769e7
    lam = np.asarray(lam_nm, dtype=np.float64)
    spectral = lam**-5 / np.expm1(c2_nm_k / (lam * temperature_k))
    return spectral / spectral.max()


def default_illuminant(
    emission_scale: float = 1.0, temperature_k: float = 3200.0
) -> IlluminantModel:
    """Halogen-like emission with smooth optics transmittance and mirror curves."""
    lam = np.arange(450.0, 1500.0 + 1e-9, 10.0)
    u = (lam - WAVELENGTH_MID_NM) / WAVELENGTH_HALF_SPAN_NM
    trans = 0.92 - 0.06 * u**2
    mirror = 0.96 - 0.03 * (lam - 450.0) / 1050.0
    emission = emission_scale * _planck_relative(lam, temperature_k)
    return IlluminantModel(
        Curve(tuple(lam), tuple(trans)),
        Curve(tuple(lam), tuple(mirror)),
        Curve(tuple(lam), tuple(emission)),
    )


def _window_curve(lo: float, hi: float, peak: float, shoulder: float = 35.0) -> Curve:
    """Plateau with smoothstep shoulders on [lo, hi], zero outside."""
    lam = np.linspace(lo, hi, 96)
    up = np.clip((lam - lo) / shoulder, 0.0, 1.0)
    down = np.clip((hi - lam) / shoulder, 0.0, 1.0)
    ramp = lambda t: t * t * (3.0 - 2.0 * t)
    vals = peak * ramp(up) * ramp(down)
    vals[0] = 0.0
    vals[-1] = 0.0
    return Curve(tuple(lam), tuple(np.maximum(vals, 0.0)), extrapolation="zero")


# Linear intensity units are DN-like: the default saturation puts a bright
# diffuse target at exposure 1 and half-meter depth near 55% of full scale,
# and leaves the combined per-band response O(1) on both camera grids.
DEFAULT_SATURATION = 240.0


def default_sensor(
    noise_fraction: float = 0.0,
    exposures: tuple[float, ...] = (1.0,),
    saturation: float = DEFAULT_SATURATION,
    vnir_window: tuple[float, float] = (425.0, 935.0),
    swir_window: tuple[float, float] = (848.0, 1545.0),
) -> SensorModel:
    """Silicon-like VNIR and InGaAs-like SWIR sensitivities on their windows."""
    return SensorModel(
        sensitivity={
            Camera.VNIR: _window_curve(*vnir_window, peak=0.95),
            Camera.SWIR: _window_curve(*swir_window, peak=0.80),
        },
        saturation=saturation,
        noise_fraction=noise_fraction,
        exposures=exposures,
    )
