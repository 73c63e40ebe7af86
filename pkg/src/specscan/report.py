"""Evaluation reports: metrics against ground truth, CSV tables, figures.

The report path writes machine-readable JSON, delimited CSV tables, and
matplotlib figures side by side, plus per-band grayscale PNGs (min-max
normalized, scale recorded in the filename) and a false-color composite.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import DepthMap, SpectralCube, rmse, spectral_angle
from .errors import ContractError


def erode_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Shrink a boolean region by a square structuring element."""
    if radius <= 0:
        return mask
    keep = mask.copy()
    padded = np.pad(mask, radius, mode="constant", constant_values=False)
    h, w = mask.shape
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            keep &= padded[dy : dy + h, dx : dx + w]
    return keep


def evaluate_spectral(
    recon: SpectralCube,
    truth: SpectralCube,
    labels: np.ndarray | None = None,
    extra_valid: np.ndarray | None = None,
    erode_px: int = 2,
    max_label: int | None = None,
) -> dict:
    """Per-region and mean spectral metrics on a shared grid.

    Regions come from the label map (region means are compared, the protocol
    used for patch charts); without labels the metrics are per-pixel over the
    valid area.  Region masks are eroded to keep windowed-filter halos at
    region borders out of the statistics.
    """
    if recon.grid.bands != truth.grid.bands:
        raise ContractError("reconstruction and truth grids differ")
    ok = recon.valid_mask & truth.valid_mask
    if extra_valid is not None:
        ok = ok & extra_valid

    bands = recon.grid.array
    diff = recon.data - truth.data
    per_band_rmse = np.sqrt(np.mean(diff[ok] ** 2, axis=0)) if np.any(ok) else np.zeros(bands.size)

    out = {
        "bands": int(bands.size),
        "erode_px": int(erode_px),
        "valid_fraction": float(ok.mean()),
        "per_band_rmse": [
            {"wavelength_nm": float(b), "rmse": float(r)} for b, r in zip(bands, per_band_rmse)
        ],
    }

    if labels is None:
        flat_r = recon.data[ok]
        flat_t = truth.data[ok]
        sams = [
            spectral_angle(r, t)
            for r, t in zip(flat_r, flat_t)
            if np.linalg.norm(r) > 0 and np.linalg.norm(t) > 0
        ]
        out["mean_sam_rad"] = float(np.mean(sams)) if sams else 0.0
        out["max_sam_rad"] = float(np.max(sams)) if sams else 0.0
        out["mean_rmse"] = float(rmse(flat_r, flat_t)) if flat_r.size else 0.0
        out["per_patch"] = []
        return out

    ids = sorted(int(v) for v in np.unique(labels))
    if max_label is not None:
        ids = [i for i in ids if i < max_label]
    rows = []
    for lab in ids:
        sel = erode_mask(labels == lab, erode_px) & ok
        if sel.sum() < 4:
            rows.append({"label": lab, "pixels": int(sel.sum()), "sam_rad": None, "rmse": None})
            continue
        mr = recon.data[sel].mean(axis=0)
        mt = truth.data[sel].mean(axis=0)
        rows.append(
            {
                "label": lab,
                "pixels": int(sel.sum()),
                "sam_rad": float(spectral_angle(mr, mt)),
                "rmse": float(rmse(mr, mt)),
            }
        )
    scored = [r for r in rows if r["sam_rad"] is not None]
    out["per_patch"] = rows
    out["evaluated_patches"] = len(scored)
    out["mean_sam_rad"] = float(np.mean([r["sam_rad"] for r in scored])) if scored else None
    out["max_sam_rad"] = float(np.max([r["sam_rad"] for r in scored])) if scored else None
    out["mean_rmse"] = float(np.mean([r["rmse"] for r in scored])) if scored else None
    return out


def evaluate_depth(depth: DepthMap, truth: DepthMap, labels: np.ndarray | None = None) -> dict:
    """Absolute depth error statistics over jointly valid pixels (in mm)."""
    both = depth.valid & truth.valid
    out = {"valid_fraction": float(depth.valid.mean()), "compared_pixels": int(both.sum())}
    if not np.any(both):
        out.update(mean_abs_error_mm=None, median_abs_error_mm=None, p90_abs_error_mm=None)
        return out
    err = np.abs(depth.depth - truth.depth)[both] * 1000.0
    out["mean_abs_error_mm"] = float(err.mean())
    out["median_abs_error_mm"] = float(np.median(err))
    out["p90_abs_error_mm"] = float(np.percentile(err, 90))

    if labels is not None:
        levels = []
        for lab in sorted(int(v) for v in np.unique(labels)):
            sel = (labels == lab) & both
            rows = np.nonzero(sel.any(axis=1))[0]
            if rows.size > 12:
                inner = sel.copy()
                inner[: rows[0] + 5] = False
                inner[rows[-1] - 4 :] = False
                if inner.sum() > 50:
                    sel = inner
            if sel.sum() < 10:
                continue
            levels.append(
                {
                    "label": lab,
                    "median_depth_m": float(np.median(depth.depth[sel])),
                    "true_depth_m": float(np.median(truth.depth[sel])),
                    "pixels": int(sel.sum()),
                }
            )
        out["levels"] = levels
        if len(levels) >= 2:
            meds = [lv["median_depth_m"] for lv in levels]
            out["step_heights_mm"] = [float(d) * 1000.0 for d in np.diff(meds)]
    return out


def sharpening_deltas(pre: SpectralCube, post: SpectralCube, truth: SpectralCube, valid=None) -> dict:
    """Per-band RMSE against the latent sharp truth before and after sharpening."""
    ok = pre.valid_mask & truth.valid_mask
    if valid is not None:
        ok = ok & valid
    bands = pre.grid.array
    rows = []
    for j, lam in enumerate(bands):
        before = float(rmse(pre.data[ok][:, j], truth.data[ok][:, j]))
        after = float(rmse(post.data[ok][:, j], truth.data[ok][:, j]))
        rows.append(
            {
                "wavelength_nm": float(lam),
                "rmse_before": before,
                "rmse_after": after,
                "delta": after - before,
            }
        )
    return {"per_band": rows}


# ---------------------------------------------------------------------------
# Writers: JSON, CSV, text
# ---------------------------------------------------------------------------


def write_report(out_dir: Path | str, report: dict):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "summary.txt").write_text(render_summary(report))
    _write_tables(out, report)


def render_summary(report: dict) -> str:
    lines = ["evaluation summary", "=================="]
    spec = report.get("spectral")
    if spec:
        lines.append(
            f"spectral: mean SAM {spec.get('mean_sam_rad')} rad, "
            f"mean RMSE {spec.get('mean_rmse')}, bands {spec.get('bands')}, "
            f"patches {spec.get('evaluated_patches', 'n/a')}"
        )
    dep = report.get("depth")
    if dep:
        lines.append(
            f"depth: mean abs error {dep.get('mean_abs_error_mm')} mm "
            f"(median {dep.get('median_abs_error_mm')}, p90 {dep.get('p90_abs_error_mm')}), "
            f"valid fraction {dep.get('valid_fraction')}"
        )
        if "step_heights_mm" in dep:
            steps = ", ".join(f"{s:.2f}" for s in dep["step_heights_mm"])
            lines.append(f"depth: step heights [{steps}] mm")
    sh = report.get("sharpening")
    if sh:
        deltas = [row["delta"] for row in sh["per_band"] if row["rmse_before"] > 0]
        if deltas:
            lines.append(
                f"sharpening: per-band RMSE delta mean {np.mean(deltas):+.5f} "
                f"(negative is better), improved bands "
                f"{sum(1 for d in deltas if d < 0)}/{len(deltas)}"
            )
    for key, value in report.get("notes", {}).items():
        lines.append(f"note: {key} = {value}")
    return "\n".join(lines) + "\n"


def _write_tables(out: Path, report: dict):
    spec = report.get("spectral")
    if spec and spec.get("per_band_rmse"):
        rows = ["wavelength_nm,rmse"]
        for row in spec["per_band_rmse"]:
            rows.append(f"{row['wavelength_nm']:.6g},{row['rmse']:.8g}")
        (out / "bands.csv").write_text("\n".join(rows) + "\n")
    if spec and spec.get("per_patch"):
        rows = ["label,pixels,sam_rad,rmse"]
        for row in spec["per_patch"]:
            sam = "" if row["sam_rad"] is None else f"{row['sam_rad']:.8g}"
            rm = "" if row["rmse"] is None else f"{row['rmse']:.8g}"
            rows.append(f"{row['label']},{row['pixels']},{sam},{rm}")
        (out / "patches.csv").write_text("\n".join(rows) + "\n")
    sh = report.get("sharpening")
    if sh:
        rows = ["wavelength_nm,rmse_before,rmse_after,delta"]
        for row in sh["per_band"]:
            rows.append(
                f"{row['wavelength_nm']:.6g},{row['rmse_before']:.8g},"
                f"{row['rmse_after']:.8g},{row['delta']:.8g}"
            )
        (out / "sharpening.csv").write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# Figures and image exports
# ---------------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_figures(
    out_dir: Path | str,
    recon: SpectralCube | None = None,
    truth: SpectralCube | None = None,
    labels: np.ndarray | None = None,
    depth: DepthMap | None = None,
    depth_truth: DepthMap | None = None,
    report: dict | None = None,
    max_label: int | None = None,
) -> list[str]:
    """Write the standard report figures; returns the created file names."""
    plt = _pyplot()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    created = []

    if recon is not None and truth is not None and labels is not None:
        ids = sorted(int(v) for v in np.unique(labels))
        if max_label is not None:
            ids = [i for i in ids if i < max_label]
        ids = ids[:24]
        n_cols = 6
        n_rows = int(np.ceil(len(ids) / n_cols)) or 1
        fig, axes = plt.subplots(n_rows, n_cols, figsize=(2.4 * n_cols, 1.9 * n_rows), squeeze=False)
        bands = recon.grid.array
        ok = recon.valid_mask & truth.valid_mask
        for ax, lab in zip(axes.ravel(), ids):
            sel = erode_mask(labels == lab, 2) & ok
            if sel.sum() >= 4:
                ax.plot(bands, truth.data[sel].mean(axis=0), "k-", lw=1.2, label="truth")
                ax.plot(bands, recon.data[sel].mean(axis=0), "r--", lw=1.0, label="recon")
            ax.set_title(f"patch {lab}", fontsize=8)
            ax.set_ylim(0, 1)
            ax.tick_params(labelsize=6)
        for ax in axes.ravel()[len(ids):]:
            ax.axis("off")
        axes[0, 0].legend(fontsize=6)
        fig.suptitle("reflectance: reconstruction vs ground truth")
        fig.tight_layout()
        fig.savefig(out / "fig_spectra.png", dpi=150)
        plt.close(fig)
        created.append("fig_spectra.png")

    if depth is not None:
        fig, axes = plt.subplots(1, 3 if depth_truth is not None else 1, figsize=(11, 3.2), squeeze=False)
        im = axes[0, 0].imshow(np.where(depth.valid, depth.depth, np.nan), cmap="viridis")
        axes[0, 0].set_title("reconstructed depth (m)")
        fig.colorbar(im, ax=axes[0, 0], shrink=0.8)
        if depth_truth is not None:
            im2 = axes[0, 1].imshow(np.where(depth_truth.valid, depth_truth.depth, np.nan), cmap="viridis")
            axes[0, 1].set_title("true depth (m)")
            fig.colorbar(im2, ax=axes[0, 1], shrink=0.8)
            err = np.where(
                depth.valid & depth_truth.valid, (depth.depth - depth_truth.depth) * 1000.0, np.nan
            )
            lim = np.nanpercentile(np.abs(err), 98) if np.isfinite(err).any() else 1.0
            im3 = axes[0, 2].imshow(err, cmap="coolwarm", vmin=-lim, vmax=lim)
            axes[0, 2].set_title("error (mm)")
            fig.colorbar(im3, ax=axes[0, 2], shrink=0.8)
        for ax in axes.ravel():
            ax.axis("off")
        fig.tight_layout()
        fig.savefig(out / "fig_depth.png", dpi=150)
        plt.close(fig)
        created.append("fig_depth.png")

    if report and report.get("spectral", {}).get("per_band_rmse"):
        rows = report["spectral"]["per_band_rmse"]
        fig, ax = plt.subplots(figsize=(7, 3))
        ax.bar([r["wavelength_nm"] for r in rows], [r["rmse"] for r in rows], width=14.0)
        ax.set_xlabel("wavelength (nm)")
        ax.set_ylabel("RMSE")
        ax.set_title("per-band reconstruction RMSE")
        fig.tight_layout()
        fig.savefig(out / "fig_rmse_bands.png", dpi=150)
        plt.close(fig)
        created.append("fig_rmse_bands.png")

    if report and report.get("sharpening"):
        rows = report["sharpening"]["per_band"]
        fig, ax = plt.subplots(figsize=(7, 3))
        lam = [r["wavelength_nm"] for r in rows]
        ax.plot(lam, [r["rmse_before"] for r in rows], "o-", ms=3, label="before sharpening")
        ax.plot(lam, [r["rmse_after"] for r in rows], "s-", ms=3, label="after sharpening")
        ax.set_xlabel("wavelength (nm)")
        ax.set_ylabel("RMSE vs latent sharp")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out / "fig_sharpening.png", dpi=150)
        plt.close(fig)
        created.append("fig_sharpening.png")

    return created


def export_band_pngs(cube: SpectralCube, out_dir: Path | str, stride: int = 1) -> list[str]:
    """Per-band grayscale PNGs, min-max normalized with the scale in the name."""
    plt = _pyplot()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for j in range(0, cube.grid.count, stride):
        band = cube.data[..., j]
        lo, hi = float(band.min()), float(band.max())
        scale = hi - lo if hi > lo else 1.0
        name = f"band_{cube.grid.bands[j]:06.0f}nm_min{lo:.4f}_max{hi:.4f}.png"
        plt.imsave(out / name, (band - lo) / scale, cmap="gray", vmin=0.0, vmax=1.0)
        names.append(name)
    return names


def export_false_color(
    cube: SpectralCube,
    path: Path | str,
    bands_nm: tuple[float, float, float] = (610.0, 550.0, 470.0),
) -> str:
    """Map three chosen bands to RGB channels (display convenience, not color science)."""
    plt = _pyplot()
    grid = cube.grid.array
    rgb = np.zeros(cube.data.shape[:2] + (3,))
    for c, lam in enumerate(bands_nm):
        j = int(np.argmin(np.abs(grid - lam)))
        band = cube.data[..., j]
        hi = float(band.max())
        rgb[..., c] = band / hi if hi > 0 else band
    plt.imsave(path, np.clip(rgb, 0.0, 1.0))
    return str(path)
