"""Pipeline configuration: one JSON document fully determines a run.

Every section mirrors a module's settings; unknown keys are rejected with
their dotted path so typos fail loudly.  ``default_config()`` dumps the
complete default tree, which the CLI exposes via --print-config.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import Camera, CameraRig, Pinhole
from .errors import ConfigError
from .fusion import FusionConfig
from .models import ScanGeometry, default_illuminant, default_sensor
from .recon import ReconConfig


@dataclass
class CameraConfig:
    fx: float = 300.0
    fy: float = 300.0
    cx: float = 47.5
    cy: float = 47.5
    width: int = 96
    height: int = 96


@dataclass
class RigConfig:
    vnir: CameraConfig = field(default_factory=CameraConfig)
    swir: CameraConfig = field(default_factory=CameraConfig)
    # Pose of the SWIR camera: X_swir = R @ X_vnir + t
    rotation: list = field(default_factory=lambda: np.eye(3).tolist())
    translation: list = field(default_factory=lambda: [-0.05, 0.0, 0.0])

    def build(self) -> CameraRig:
        return CameraRig(
            Pinhole(**asdict(self.vnir)),
            Pinhole(**asdict(self.swir)),
            np.asarray(self.rotation, dtype=np.float64),
            np.asarray(self.translation, dtype=np.float64),
        )


@dataclass
class ScanConfig:
    start_deg: float = -22.5
    stop_deg: float = 22.5
    count: int = 181

    def angles(self) -> np.ndarray:
        if self.count < 2:
            raise ConfigError("scan.count must be >= 2")
        return np.linspace(self.start_deg, self.stop_deg, self.count)


@dataclass
class GeometryConfig:
    galvo_position: list = field(default_factory=lambda: [0.002, 0.0, 0.0])
    dispersion_span_deg: float = 10.0
    dispersion_curve_deg: float = 0.9
    sigma_base_deg: float = 0.24
    sigma_wavelength_deg: float = 0.10
    sigma_spatial_deg: float = 0.025
    sigma_depth_deg: float = 0.04
    truth_depths: list = field(default_factory=lambda: [0.30, 0.39, 0.48, 0.57, 0.66, 0.75])
    truth_wavelength_samples: int = 16

    def build(self) -> ScanGeometry:
        return ScanGeometry(
            galvo_position=tuple(self.galvo_position),
            dispersion_span_deg=self.dispersion_span_deg,
            dispersion_curve_deg=self.dispersion_curve_deg,
            sigma_base_deg=self.sigma_base_deg,
            sigma_wavelength_deg=self.sigma_wavelength_deg,
            sigma_spatial_deg=self.sigma_spatial_deg,
            sigma_depth_deg=self.sigma_depth_deg,
        )


@dataclass
class SensorConfig:
    noise_fraction: float = 0.0
    exposures: list = field(default_factory=lambda: [1.0])
    saturation: float = 240.0
    emission_scale: float = 1.0

    def build_sensor(self):
        return default_sensor(
            noise_fraction=self.noise_fraction,
            exposures=tuple(self.exposures),
            saturation=self.saturation,
        )

    def build_illuminant(self):
        return default_illuminant(emission_scale=self.emission_scale)


@dataclass
class SceneConfig:
    kind: str = "patch_chart"
    seed: int = 0
    texture_amplitude: float = 0.10
    # patch chart
    patches: int = 24
    chart_depth_m: float = 0.45
    chart_fraction: list = field(default_factory=lambda: [0.77, 0.92])
    chart_center: list = field(default_factory=lambda: [0.585, 0.5])
    rough_spectra: bool = False
    # staircase
    levels: int = 5
    step_height_m: float = 0.020
    base_depth_m: float = 0.40
    staircase_orientation: str = "rows"
    # two-material
    split: str = "vertical"
    material_depth_m: float = 0.50
    # chromatic blur (degrades the rendered scene; ground truth stays sharp)
    blur_enabled: bool = False
    blur_max_sigma_px: float = 1.6
    blur_floor_sigma_px: float = 0.7


@dataclass
class CalibrationConfig:
    positions_x: int = 5
    positions_y: int = 5
    depths: list = field(default_factory=lambda: [0.40, 0.50, 0.60])
    wavelengths_per_camera: int = 8
    filter_bandwidth_nm: float = 10.0
    noise_floor: float = 0.0
    target_reflectance: float = 0.99
    target_depth_m: float = 0.50
    response_pixel_stride: int = 8
    response_lr: float = 0.1
    response_max_iter: int = 4000
    response_tol: float = 0.1


@dataclass
class StereoConfig:
    # search range for the geometric disparity (x_left - x_right), pixels
    disparity_min: float = 8.0
    disparity_max: float = 18.0
    window: list = field(default_factory=lambda: [9, 7])
    aggregation: int = 2
    subpixel: str = "zncc"
    lr_threshold: float = 1.0
    prefilter_radius: int = 0
    speckle_tol_px: float = 0.5
    speckle_min_neighbors: int = 6
    min_disparity: float = 0.1


@dataclass
class ReconSection:
    learning_rate: float = 0.1
    max_iter: int = 300
    tol: float = 1e-9
    lambda_spectral: float = 1.0
    lambda_spatial: float = 1.0
    nonnegative: bool = True
    l1_epsilon: float = 1e-8
    dtype: str = "float32"
    checkpoint_every: int = 0

    def build(self, checkpoint_dir: str | None = None) -> ReconConfig:
        return ReconConfig(
            learning_rate=self.learning_rate,
            max_iter=self.max_iter,
            tol=self.tol,
            lambda_spectral=self.lambda_spectral,
            lambda_spatial=self.lambda_spatial,
            nonnegative=self.nonnegative,
            l1_epsilon=self.l1_epsilon,
            dtype=self.dtype,
            checkpoint_every=self.checkpoint_every,
            checkpoint_dir=checkpoint_dir,
        )


@dataclass
class FusionSection:
    depth_threshold_m: float = 0.005
    merge_rule: str = "prefer-vnir-below-875"
    guided_radius: int = 4
    guided_eps: float = 1e-3
    guide_vnir: list = field(default_factory=lambda: [510.0, 850.0])
    guide_swir: list = field(default_factory=lambda: [950.0, 1200.0])

    def build(self) -> FusionConfig:
        return FusionConfig(
            depth_threshold_m=self.depth_threshold_m,
            merge_rule=self.merge_rule,
            guided_radius=self.guided_radius,
            guided_eps=self.guided_eps,
            guide_vnir=tuple(self.guide_vnir),
            guide_swir=tuple(self.guide_swir),
        )


@dataclass
class PipelineConfig:
    seed: int = 0
    threads: int | None = None
    use_calibrated_models: bool = False
    rig: RigConfig = field(default_factory=RigConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    stereo: StereoConfig = field(default_factory=StereoConfig)
    recon: ReconSection = field(default_factory=ReconSection)
    fusion: FusionSection = field(default_factory=FusionSection)

    def validate(self):
        if self.scene.kind not in ("patch_chart", "staircase", "two_material"):
            raise ConfigError(f"scene.kind {self.scene.kind!r} unknown")
        if self.stereo.disparity_min < 0 or self.stereo.disparity_max < self.stereo.disparity_min:
            raise ConfigError("stereo disparity range must satisfy 0 <= min <= max")
        if len(self.stereo.window) != 2 or any(int(v) % 2 == 0 for v in self.stereo.window):
            raise ConfigError("stereo.window must be two odd integers")
        if any(e <= 0 for e in self.sensor.exposures):
            raise ConfigError("sensor.exposures must be positive")
        if self.recon.learning_rate <= 0:
            raise ConfigError("recon.learning_rate must be > 0")
        self.rig.build()
        self.scan.angles()
        self.fusion.build()
        return self


_SECTION_TYPES = {
    "rig": RigConfig,
    "scan": ScanConfig,
    "geometry": GeometryConfig,
    "sensor": SensorConfig,
    "scene": SceneConfig,
    "calibration": CalibrationConfig,
    "stereo": StereoConfig,
    "recon": ReconSection,
    "fusion": FusionSection,
}


def _from_dict(cls, data: dict, path: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path}{key}")
        if key in ("vnir", "swir") and cls is RigConfig:
            kwargs[key] = _from_dict(CameraConfig, value, f"{path}{key}.")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config section {path[:-1]}: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    kwargs = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            kwargs[key] = _from_dict(_SECTION_TYPES[key], value, f"{key}.")
        elif key in ("seed", "threads", "use_calibrated_models"):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key {key}")
    return PipelineConfig(**kwargs).validate()


def config_to_dict(cfg: PipelineConfig) -> dict:
    return asdict(cfg)


def load_config(path: Path | str) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(path: Path | str, cfg: PipelineConfig):
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")


def default_config() -> PipelineConfig:
    return PipelineConfig()


def apply_overrides(cfg: PipelineConfig, overrides: list[str]) -> PipelineConfig:
    """Apply dotted key=value overrides (e.g. recon.max_iter=500)."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        key, raw = item.split("=", 1)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown override path {key!r}")
            node = node[part]
        leaf = parts[-1]
        if leaf not in node:
            raise ConfigError(f"unknown override path {key!r}")
        try:
            node[leaf] = json.loads(raw)
        except json.JSONDecodeError:
            node[leaf] = raw  # bare strings allowed
    return config_from_dict(data)
