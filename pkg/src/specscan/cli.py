"""Command-line pipeline driver.

Subcommands mirror the processing stages; every stage reads and writes a
run directory so stages can be re-run independently:

    render             synthesize a multi-exposure dataset from the config
    calibrate          fit the Gaussian parameter fields and the response
    reconstruct-depth  max-project, rectify, match, triangulate, warp
    reconstruct-spectra  per-camera reflectance recovery
    fuse               align SWIR into the VNIR view, merge, sharpen
    evaluate           metrics + report tables and figures
    pipeline           all stages in order

Exit codes: 0 success, 2 configuration/validation error, 3 numerical
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import fileio
from .calibration import (
    estimate_radiometric_response,
    build_gaussian_field,
    fit_sweep,
    simulate_calibration_capture,
)
from .config import (
    PipelineConfig,
    apply_overrides,
    config_to_dict,
    default_config,
    load_config,
    save_config,
)
from .core import Camera, DepthMap, SpectralCube, resample_cube, swir_grid, vnir_grid
from .depth import (
    disparity_to_depth,
    filter_disparity_speckles,
    match_stereo,
    max_project,
    normalize_local_contrast,
    rectify_pair,
    warp_depth_between,
)
from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    FitRejectedError,
    GridRangeError,
    NumericalError,
    SpecscanError,
    ValidationError,
)
from .fusion import ChromaticBlurModel, align_swir_to_vnir, guided_sharpen, merge_cubes
from .models import truth_fields
from .recon import reconstruct_reflectance
from .report import (
    evaluate_depth,
    evaluate_spectral,
    export_band_pngs,
    export_false_color,
    render_figures,
    sharpening_deltas,
    write_report,
)
from .scenes import (
    make_patch_chart_scene,
    make_staircase_scene,
    make_two_material_scene,
    render_dataset,
)

GRIDS = {Camera.VNIR: vnir_grid, Camera.SWIR: swir_grid}


def _grids():
    return {cam: build() for cam, build in GRIDS.items()}


def _build_world(cfg: PipelineConfig):
    """Shared device truth derived from the config."""
    rig = cfg.rig.build()
    geom = cfg.geometry.build()
    grids = _grids()
    fields = truth_fields(
        rig,
        geom,
        grids,
        zs=np.asarray(cfg.geometry.truth_depths),
        nl=cfg.geometry.truth_wavelength_samples,
    )
    illum = cfg.sensor.build_illuminant()
    sensor = cfg.sensor.build_sensor()
    return rig, geom, grids, fields, illum, sensor


def _build_scene(cfg: PipelineConfig, rig):
    sc = cfg.scene
    if sc.kind == "patch_chart":
        scene = make_patch_chart_scene(
            rig,
            patches=sc.patches,
            seed=sc.seed,
            depth_m=sc.chart_depth_m,
            texture_amplitude=sc.texture_amplitude,
            chart_fraction=tuple(sc.chart_fraction),
            chart_center=tuple(sc.chart_center),
            rough_spectra=sc.rough_spectra,
        )
    elif sc.kind == "staircase":
        scene = make_staircase_scene(
            rig,
            levels=sc.levels,
            step_height_m=sc.step_height_m,
            base_depth_m=sc.base_depth_m,
            texture_amplitude=sc.texture_amplitude,
            seed=sc.seed,
            orientation=sc.staircase_orientation,
        )
    else:
        scene = make_two_material_scene(
            rig,
            split=sc.split,
            depth_m=sc.material_depth_m,
            texture_amplitude=sc.texture_amplitude,
            seed=sc.seed,
        )
    if sc.blur_enabled:
        scene.blur = ChromaticBlurModel.for_grid(
            scene.grid,
            cfg.fusion.build(),
            max_sigma=sc.blur_max_sigma_px,
            floor_sigma=sc.blur_floor_sigma_px,
        )
    return scene


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def cmd_render(cfg: PipelineConfig, run: Path) -> dict:
    rig, geom, grids, fields, illum, sensor = _build_world(cfg)
    scene = _build_scene(cfg, rig)
    out = run / "dataset"
    manifest = render_dataset(
        scene,
        fields,
        illum,
        sensor,
        cfg.scan.angles(),
        list(cfg.sensor.exposures),
        out,
        seed=cfg.seed,
        grids=grids,
        threads=cfg.threads,
    )
    models = run / "models"
    models.mkdir(parents=True, exist_ok=True)
    for cam, fld in fields.items():
        fileio.save_field(models / f"field_{cam.value.lower()}", fld)
    fileio.save_illuminant(models / "illuminant.json", illum)
    fileio.save_sensor(models / "sensor.json", sensor)
    return manifest


def cmd_calibrate(cfg: PipelineConfig, run: Path) -> dict:
    """Full calibration round trip on simulated reference-target captures."""
    rig, geom, grids, fields, illum, sensor = _build_world(cfg)
    cal = cfg.calibration
    out = run / "calib"
    out.mkdir(parents=True, exist_ok=True)
    angles = cfg.scan.angles()

    session = {
        "angles": {"start": float(angles[0]), "stop": float(angles[-1]), "count": int(angles.size)},
        "depths_m": list(cal.depths),
        "filter_bandwidth_nm": cal.filter_bandwidth_nm,
        "lattice": {"positions_x": cal.positions_x, "positions_y": cal.positions_y},
        "target_reflectance": cal.target_reflectance,
        "cameras": {},
    }

    fitted_fields = {}
    for cam in (Camera.VNIR, Camera.SWIR):
        intr = rig.intrinsics(cam)
        lam = grids[cam].array
        filters = [(float(c), cal.filter_bandwidth_nm) for c in np.linspace(lam[0], lam[-1], cal.wavelengths_per_camera)]
        xs = np.linspace(0.0, intr.width - 1.0, cal.positions_x)
        ys = np.linspace(0.0, intr.height - 1.0, cal.positions_y)
        positions = [(float(x), float(y)) for x in xs for y in ys]
        profiles = simulate_calibration_capture(
            fields[cam],
            illum,
            sensor,
            cam,
            filters,
            list(cal.depths),
            angles,
            positions=positions,
            reflectance=cal.target_reflectance,
        )
        rows = fit_sweep(profiles, noise_floor=cal.noise_floor)
        fileio.save_fits_csv(out / f"fits_{cam.value.lower()}.csv", rows)
        fitted = build_gaussian_field([r[:6] for r in rows])
        fitted_fields[cam] = fitted
        fileio.save_field(out / f"field_{cam.value.lower()}", fitted)
        session["cameras"][cam.value] = {
            "filters_nm": [f[0] for f in filters],
            "profiles": len(profiles),
        }

    # Response estimation from a full-sweep capture of the reference plane.
    from .forward import render_scan_stack

    stacks, depths = {}, {}
    for cam in (Camera.VNIR, Camera.SWIR):
        intr = rig.intrinsics(cam)
        plane = SpectralCube(
            intr.width,
            intr.height,
            grids[cam],
            np.full((intr.height, intr.width, grids[cam].count), cal.target_reflectance),
        )
        depth = DepthMap.full(intr.width, intr.height, cal.target_depth_m)
        stacks[cam] = render_scan_stack(
            plane, depth, fields[cam], illum, sensor, angles, threads=cfg.threads
        )
        depths[cam] = depth
    response = estimate_radiometric_response(
        stacks,
        fitted_fields,
        depths,
        grids,
        reflectance=cal.target_reflectance,
        pixel_stride=cal.response_pixel_stride,
        lr=cal.response_lr,
        max_iter=cal.response_max_iter,
        tol=cal.response_tol,
    )
    fileio.save_response(out / "response.json", response)
    fileio.write_json(out / "session.json", session)
    return session


def _load_hdr_stacks(run: Path):
    dataset = run / "dataset"
    manifest = fileio.read_json(dataset / "manifest.json")
    stacks = {}
    for cam in (Camera.VNIR, Camera.SWIR):
        stacks[cam] = fileio.load_stack(dataset / manifest["files"][f"{cam.value.lower()}_hdr"])
    return manifest, stacks


def cmd_reconstruct_depth(cfg: PipelineConfig, run: Path) -> dict:
    rig = cfg.rig.build()
    st = cfg.stereo
    manifest, stacks = _load_hdr_stacks(run)
    out = run / "depth"
    out.mkdir(parents=True, exist_ok=True)

    left = max_project(stacks[Camera.VNIR])
    right = max_project(stacks[Camera.SWIR])
    offset = float(st.disparity_min)
    left_r, right_r, geom = rectify_pair(left, right, rig, disparity_offset_px=offset)
    if st.prefilter_radius > 0:
        left_r = normalize_local_contrast(left_r, st.prefilter_radius)
        right_r = normalize_local_contrast(right_r, st.prefilter_radius)
    hi = int(np.ceil(st.disparity_max - st.disparity_min))
    disp = match_stereo(
        left_r,
        right_r,
        search_range=(0, hi),
        window=tuple(int(v) for v in st.window),
        lr_threshold=st.lr_threshold,
        aggregation=st.aggregation,
        subpixel=st.subpixel,
    )
    if st.speckle_tol_px > 0:
        disp = filter_disparity_speckles(
            disp, tol_px=st.speckle_tol_px, min_neighbors=st.speckle_min_neighbors
        )
    z_vnir = disparity_to_depth(
        disp,
        geom.focal_px,
        geom.baseline_m,
        min_disparity=st.min_disparity,
        disparity_offset=geom.disparity_offset,
    )
    z_swir = warp_depth_between(z_vnir, rig, Camera.VNIR, Camera.SWIR)

    fileio.save_disparity(out / "disparity", disp)
    fileio.save_depth(out / "depth_vnir", z_vnir)
    fileio.save_depth(out / "depth_swir", z_swir)
    info = {
        "focal_px": geom.focal_px,
        "baseline_m": geom.baseline_m,
        "disparity_offset_px": geom.disparity_offset,
        "search_range_px": [st.disparity_min, st.disparity_max],
        "valid_fraction": float(z_vnir.valid.mean()),
    }
    fileio.write_json(out / "geometry.json", info)
    return info


def cmd_reconstruct_spectra(cfg: PipelineConfig, run: Path) -> dict:
    rig, geom, grids, fields, illum, sensor = _build_world(cfg)
    manifest, stacks = _load_hdr_stacks(run)
    depths = {
        Camera.VNIR: fileio.load_depth(run / "depth" / "depth_vnir"),
        Camera.SWIR: fileio.load_depth(run / "depth" / "depth_swir"),
    }
    out = run / "spectra"
    out.mkdir(parents=True, exist_ok=True)

    responses = {Camera.VNIR: None, Camera.SWIR: None}
    if cfg.use_calibrated_models:
        calib_dir = run / "calib"
        fields = {
            Camera.VNIR: fileio.load_field(calib_dir / "field_vnir"),
            Camera.SWIR: fileio.load_field(calib_dir / "field_swir"),
        }
        loaded = fileio.load_response(calib_dir / "response.json")
        responses = {cam: loaded.for_camera(cam) for cam in responses}

    info = {}
    for cam in (Camera.VNIR, Camera.SWIR):
        rc = cfg.recon.build(
            checkpoint_dir=str(out / f"checkpoints_{cam.value.lower()}")
            if cfg.recon.checkpoint_every
            else None
        )
        t0 = time.time()
        cube = reconstruct_reflectance(
            stacks[cam],
            depths[cam],
            fields[cam],
            None if cfg.use_calibrated_models else illum,
            None if cfg.use_calibrated_models else sensor,
            grids[cam],
            rc,
            response=responses[cam],
        )
        fileio.save_cube(out / f"cube_{cam.value.lower()}", cube)
        info[cam.value] = {
            "seconds": round(time.time() - t0, 2),
            "valid_fraction": float(cube.valid_mask.mean()),
        }
    fileio.write_json(out / "recon.json", info)
    return info


def cmd_fuse(cfg: PipelineConfig, run: Path) -> dict:
    rig = cfg.rig.build()
    fcfg = cfg.fusion.build()
    cubes = {
        Camera.VNIR: fileio.load_cube(run / "spectra" / "cube_vnir"),
        Camera.SWIR: fileio.load_cube(run / "spectra" / "cube_swir"),
    }
    depths = {
        Camera.VNIR: fileio.load_depth(run / "depth" / "depth_vnir"),
        Camera.SWIR: fileio.load_depth(run / "depth" / "depth_swir"),
    }
    out = run / "fused"
    out.mkdir(parents=True, exist_ok=True)
    aligned = align_swir_to_vnir(cubes[Camera.SWIR], depths[Camera.VNIR], depths[Camera.SWIR], rig, fcfg)
    fused, swir_band_valid = merge_cubes(cubes[Camera.VNIR], aligned, fcfg)
    sharp = guided_sharpen(fused, fcfg)
    fileio.save_cube(out / "cube_fused", fused)
    fileio.save_cube(out / "cube_sharpened", sharp)
    fileio.save_labels(out / "swir_band_valid", swir_band_valid.astype(np.uint8))
    info = {
        "fused_bands": fused.grid.count,
        "merge_rule": fcfg.merge_rule,
        "swir_band_valid_fraction": float(swir_band_valid.mean()),
    }
    fileio.write_json(out / "fuse.json", info)
    return info


def cmd_evaluate(cfg: PipelineConfig, run: Path) -> dict:
    dataset = run / "dataset"
    if not (dataset / "manifest.json").exists():
        raise ConfigError(f"no dataset manifest under {dataset} (ground truth unavailable)")
    manifest = fileio.read_json(dataset / "manifest.json")
    gt_cube = fileio.load_cube(dataset / manifest["files"]["gt_cube"])
    gt_depth = fileio.load_depth(dataset / manifest["files"]["gt_depth_vnir"])
    labels = fileio.load_labels(dataset / manifest["files"]["gt_labels"])
    out = run / "report"
    out.mkdir(parents=True, exist_ok=True)

    report: dict = {"notes": {"scene_kind": manifest.get("scene_kind", "unknown")}}
    recon_sharp = recon_fused = None
    swir_band_valid = None
    if (run / "fused" / "cube_sharpened.json").exists():
        recon_sharp = fileio.load_cube(run / "fused" / "cube_sharpened")
        recon_fused = fileio.load_cube(run / "fused" / "cube_fused")
        swir_band_valid = fileio.load_labels(run / "fused" / "swir_band_valid").astype(bool)
        gt_on_fused = resample_cube(gt_cube, recon_sharp.grid)
        max_label = manifest.get("meta", {}).get("background_label")
        report["spectral"] = evaluate_spectral(
            recon_sharp,
            gt_on_fused,
            labels=labels,
            extra_valid=swir_band_valid,
            max_label=max_label,
        )
        report["sharpening"] = sharpening_deltas(
            recon_fused, recon_sharp, gt_on_fused, valid=swir_band_valid
        )
        report["notes"]["fused_band_count"] = recon_sharp.grid.count

    depth = None
    if (run / "depth" / "depth_vnir.json").exists():
        depth = fileio.load_depth(run / "depth" / "depth_vnir")
        step_labels = labels if manifest.get("scene_kind") == "staircase" else None
        report["depth"] = evaluate_depth(depth, gt_depth, labels=step_labels)
        if step_labels is not None:
            report["depth"]["true_step_height_mm"] = (
                manifest.get("meta", {}).get("step_height_m", 0.0) * 1000.0
            )

    write_report(out, report)
    figures = render_figures(
        out,
        recon=recon_sharp,
        truth=resample_cube(gt_cube, recon_sharp.grid) if recon_sharp is not None else None,
        labels=labels,
        depth=depth,
        depth_truth=gt_depth,
        report=report,
        max_label=manifest.get("meta", {}).get("background_label"),
    )
    if recon_sharp is not None:
        export_band_pngs(recon_sharp, out / "bands")
        export_false_color(recon_sharp, out / "false_color.png")
    report["notes"]["figures"] = figures
    return report


def cmd_pipeline(cfg: PipelineConfig, run: Path) -> dict:
    cmd_render(cfg, run)
    cmd_calibrate(cfg, run)
    cmd_reconstruct_depth(cfg, run)
    cmd_reconstruct_spectra(cfg, run)
    cmd_fuse(cfg, run)
    return cmd_evaluate(cfg, run)


COMMANDS = {
    "render": cmd_render,
    "calibrate": cmd_calibrate,
    "reconstruct-depth": cmd_reconstruct_depth,
    "reconstruct-spectra": cmd_reconstruct_spectra,
    "fuse": cmd_fuse,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specscan",
        description="simulate and reconstruct broadband hyperspectral 3D scans",
    )
    parser.add_argument("--print-config", action="store_true", help="dump the default config JSON and exit")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--out", type=str, required=True, help="run directory")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY.PATH=VALUE",
            help="override a config key (repeatable); flags win over the config file",
        )
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--threads", type=int, default=None, help="worker thread count")
        if name in ("reconstruct-depth", "pipeline"):
            p.add_argument("--search-range", type=float, nargs=2, metavar=("MIN", "MAX"), default=None,
                           help="geometric disparity search range in pixels")
            p.add_argument("--window", type=int, nargs=2, metavar=("W", "H"), default=None,
                           help="census window size")
        if name in ("reconstruct-spectra", "pipeline"):
            p.add_argument("--lr", type=float, default=None, help="solver learning rate")
            p.add_argument("--max-iter", type=int, default=None, help="solver iteration cap")
            p.add_argument("--tol", type=float, default=None, help="relative loss convergence threshold")
            p.add_argument("--lambda-spectral", type=float, default=None, help="spectral sparsity strength")
            p.add_argument("--lambda-spatial", type=float, default=None, help="spatial sparsity strength")
            p.add_argument("--use-calibrated", action="store_true",
                           help="reconstruct with the calibrated field and response")
    return parser


def _resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else default_config()
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    if getattr(args, "search_range", None):
        overrides.append(f"stereo.disparity_min={args.search_range[0]}")
        overrides.append(f"stereo.disparity_max={args.search_range[1]}")
    if getattr(args, "window", None):
        overrides.append(f"stereo.window=[{args.window[0]}, {args.window[1]}]")
    for flag, key in (
        ("lr", "recon.learning_rate"),
        ("max_iter", "recon.max_iter"),
        ("tol", "recon.tol"),
        ("lambda_spectral", "recon.lambda_spectral"),
        ("lambda_spatial", "recon.lambda_spatial"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if getattr(args, "use_calibrated", False):
        overrides.append("use_calibrated_models=true")
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        import json as _json

        print(_json.dumps(config_to_dict(default_config()), indent=2))
        return 0
    if not args.command:
        parser.print_help()
        return 0
    try:
        cfg = _resolve_config(args)
        run = Path(args.out)
        run.mkdir(parents=True, exist_ok=True)
        save_config(run / "config.json", cfg)
        result = COMMANDS[args.command](cfg, run)
        if isinstance(result, dict):
            summary_keys = [k for k in ("mean_sam_rad", "valid_fraction", "fused_bands") if k in result]
            for key in summary_keys:
                print(f"{key}: {result[key]}")
        print(f"{args.command}: ok ({run})")
        return 0
    except (ConfigError, ValidationError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, DomainError, FitRejectedError, GridRangeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4
    except SpecscanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
