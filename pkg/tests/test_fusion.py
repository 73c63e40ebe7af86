import numpy as np
import pytest

from specscan.core import (
    Camera,
    CameraRig,
    DepthMap,
    Pinhole,
    SpectralCube,
    WavelengthGrid,
    parallel_rig,
    swir_grid,
    union_grid,
    vnir_grid,
)
from specscan.errors import ConfigError, ContractError
from specscan.fusion import (
    ChromaticBlurModel,
    FusionConfig,
    align_swir_to_vnir,
    guided_filter,
    guided_sharpen,
    merge_cubes,
    nearest_guide_band,
)


def swir_cube(h, w, seed=0, valid=None):
    rng = np.random.default_rng(seed)
    grid = swir_grid()
    return SpectralCube(w, h, grid, rng.uniform(0.1, 0.9, (h, w, grid.count)), valid=valid)


class TestAlign:
    def test_colocated_identity(self):
        cam = Pinhole(100.0, 100.0, 15.5, 15.5, 32, 32)
        rig = CameraRig(cam, cam, np.eye(3), np.zeros(3))
        cube = swir_cube(32, 32, 1)
        z = DepthMap.full(32, 32, 0.5)
        out = align_swir_to_vnir(cube, z, z, rig)
        assert np.all(out.valid_mask)
        assert np.allclose(out.data, cube.data, atol=1e-12)

    def test_plane_constant_shift_oracle(self):
        rig = parallel_rig(32, 32, 100.0, 0.05)
        z_m = 0.5
        shift = 100.0 * 0.05 / z_m  # 10 px disparity
        cube = swir_cube(32, 32, 2)
        z = DepthMap.full(32, 32, z_m)
        out = align_swir_to_vnir(cube, z, z, rig)
        xs = np.arange(32)
        # VNIR pixel x sees SWIR pixel x - shift
        src = xs - shift
        ok_cols = (src >= 0) & (src <= 31)
        expected = cube.data[:, (xs - int(round(shift)))[ok_cols], :]
        got = out.data[:, ok_cols, :]
        assert np.all(out.valid_mask[:, ok_cols])
        assert np.allclose(got, expected, atol=1e-6)
        assert not np.any(out.valid_mask[:, ~ok_cols])

    def test_depth_discrepancy_rejected(self):
        # SWIR reports a different surface than the VNIR prediction: ghost
        rig = parallel_rig(32, 32, 100.0, 0.05)
        cube = swir_cube(32, 32, 3)
        z_v = DepthMap.full(32, 32, 0.5)
        z_far = DepthMap.full(32, 32, 0.6)
        out = align_swir_to_vnir(cube, z_v, z_far, rig, FusionConfig(depth_threshold_m=0.005))
        assert not np.any(out.valid_mask)
        out2 = align_swir_to_vnir(cube, z_v, z_v, rig)
        assert np.any(out2.valid_mask)

    def test_occluder_band_invalidated(self):
        # a near column in the SWIR depth map only: those correspondences
        # disagree and get dropped, the rest survive
        rig = parallel_rig(32, 32, 100.0, 0.05)
        cube = swir_cube(32, 32, 4)
        z_v = DepthMap.full(32, 32, 0.5)
        depth = np.full((32, 32), 0.5)
        depth[:, 14:18] = 0.3
        z_s = DepthMap(32, 32, depth, np.ones((32, 32), bool))
        out = align_swir_to_vnir(cube, z_v, z_s, rig)
        assert not np.any(out.valid_mask[:, 24:27])  # pixels hitting the occluder band
        assert np.all(out.valid_mask[:, 12:14])


class TestMerge:
    def _pair(self, h=4, w=4):
        rng = np.random.default_rng(0)
        vn = SpectralCube(w, h, vnir_grid(), rng.uniform(0.2, 0.8, (h, w, 23)))
        sw = SpectralCube(w, h, swir_grid(), rng.uniform(0.2, 0.8, (h, w, 26)))
        return vn, sw

    def test_default_rule_48_bands(self):
        vn, sw = self._pair()
        fused, swir_ok = merge_cubes(vn, sw, FusionConfig())
        assert fused.grid.count == 48
        assert np.all(np.diff(fused.grid.array) > 0)
        assert fused.grid.camera == Camera.FUSED
        # VNIR bands strictly below 875, all SWIR bands
        assert sum(1 for s in fused.grid.band_sources if s == Camera.VNIR) == 22
        assert np.all(swir_ok)

    def test_prefer_swir_rule(self):
        vn, sw = self._pair()
        fused, _ = merge_cubes(vn, sw, FusionConfig(merge_rule="prefer-swir-above-890"))
        assert fused.grid.count == 23 + 25
        assert np.all(np.diff(fused.grid.array) > 0)

    def test_blend_rule_union_grid(self):
        vn, sw = self._pair()
        fused, _ = merge_cubes(vn, sw, FusionConfig(merge_rule="blend"))
        assert fused.grid.count == 49
        # far from the overlap the values come straight from the source cubes
        assert np.allclose(fused.data[..., 0], vn.data[..., 0])
        assert np.allclose(fused.data[..., -1], sw.data[..., -1])

    def test_disjoint_concatenation(self):
        rng = np.random.default_rng(1)
        g1 = WavelengthGrid((500.0, 600.0), Camera.VNIR)
        g2 = WavelengthGrid((1000.0, 1100.0), Camera.SWIR)
        a = SpectralCube(2, 2, g1, rng.uniform(0, 1, (2, 2, 2)))
        b = SpectralCube(2, 2, g2, rng.uniform(0, 1, (2, 2, 2)))
        fused, _ = merge_cubes(a, b, FusionConfig())
        assert fused.grid.bands == (500.0, 600.0, 1000.0, 1100.0)
        assert np.allclose(fused.data, np.concatenate([a.data, b.data], axis=-1))

    def test_invalid_swir_pixels_keep_vnir_only(self):
        vn, sw = self._pair()
        mask = np.ones((4, 4), bool)
        mask[2, 2] = False
        sw = SpectralCube(4, 4, sw.grid, sw.data, valid=mask)
        fused, swir_ok = merge_cubes(vn, sw, FusionConfig())
        assert not swir_ok[2, 2]
        swir_cols = np.array([s == Camera.SWIR for s in fused.grid.band_sources])
        assert np.all(fused.data[2, 2][swir_cols] == 0.0)
        assert np.allclose(fused.data[2, 2][~swir_cols], vn.data[2, 2][vn.grid.array < 875.0])


class TestGuidedFilter:
    def test_self_guidance_identity(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (24, 24))
        out = guided_filter(img, img, radius=3, eps=1e-12)
        assert np.max(np.abs(out - img)) < 1e-6

    def test_constant_preserved_exactly(self):
        guide = np.random.default_rng(1).uniform(0, 1, (16, 16))
        out = guided_filter(np.full((16, 16), 0.42), guide, radius=4, eps=1e-3)
        assert np.allclose(out, 0.42, rtol=0.0, atol=1e-12)

    def test_step_edge_sharpened(self):
        # blurred step + sharp guide: the output edge must steepen
        x = np.arange(48)
        guide = np.where(x < 24, 0.2, 0.8) * np.ones((48, 1))
        guide = guide.T.copy()
        blurred = np.clip(0.2 + 0.6 / (1.0 + np.exp(-(x - 24) / 4.0)), 0, 1) * np.ones((48, 1))
        blurred = blurred.T.copy()
        out = guided_filter(blurred, guide, radius=4, eps=1e-4)
        grad_in = np.abs(np.diff(blurred[24])).max()
        grad_out = np.abs(np.diff(out[24])).max()
        assert grad_out > grad_in


class TestGuidedSharpen:
    def test_guide_bands_pass_through_bit_exact(self):
        rng = np.random.default_rng(2)
        grid = union_grid(vnir_grid(), swir_grid())
        cube = SpectralCube(8, 8, grid, rng.uniform(0, 1, (8, 8, grid.count)))
        out = guided_sharpen(cube, FusionConfig())
        bands = grid.array
        for j, lam in enumerate(bands):
            cam = grid.source_of(j)
            lo, hi = FusionConfig().guide_interval(cam)
            if lo <= lam <= hi:
                assert np.array_equal(out.data[..., j], cube.data[..., j])
            else:
                assert not np.array_equal(out.data[..., j], cube.data[..., j])

    def test_nearest_guide_selection(self):
        bands = vnir_grid().array
        j = nearest_guide_band(470.0, bands, (510.0, 850.0))
        assert bands[j] == 510.0
        # tie resolves toward the shorter wavelength
        g = np.array([500.0, 520.0])
        assert g[nearest_guide_band(510.0, g, (495.0, 525.0))] == 500.0

    def test_disjoint_guide_set_rejected(self):
        grid = WavelengthGrid((460.0, 480.0), Camera.VNIR)
        cube = SpectralCube(4, 4, grid, np.full((4, 4, 2), 0.5))
        with pytest.raises(ConfigError):
            guided_sharpen(cube, FusionConfig())

    def test_blur_then_sharpen_reduces_error(self):
        # structured scene: blur out-of-guide bands, sharpen, compare RMSE
        rng = np.random.default_rng(5)
        grid = vnir_grid()
        base = np.where(np.add.outer(np.arange(32), np.arange(32)) % 16 < 8, 0.25, 0.75)
        spectra = rng.uniform(0.3, 1.6, grid.count)
        latent = np.clip(base[..., None] * spectra, 0.0, 1.0)
        cube = SpectralCube(32, 32, grid, latent)
        cfg = FusionConfig(guided_radius=2, guided_eps=1e-4)
        blur = ChromaticBlurModel.for_grid(grid, cfg)
        degraded = blur.apply(cube)
        sharpened = guided_sharpen(degraded, cfg)
        for j, sigma in enumerate(blur.sigmas):
            if sigma == 0:
                continue
            before = np.sqrt(np.mean((degraded.data[..., j] - latent[..., j]) ** 2))
            after = np.sqrt(np.mean((sharpened.data[..., j] - latent[..., j]) ** 2))
            assert after < before


class TestBlurModel:
    def test_zero_inside_guides_positive_outside(self):
        grid = union_grid(vnir_grid(), swir_grid())
        cfg = FusionConfig()
        blur = ChromaticBlurModel.for_grid(grid, cfg)
        bands = grid.array
        for j, lam in enumerate(bands):
            lo, hi = cfg.guide_interval(grid.source_of(j))
            if lo <= lam <= hi:
                assert blur.sigmas[j] == 0.0
            else:
                assert blur.sigmas[j] > 0.0

    def test_increases_toward_grid_edges(self):
        grid = vnir_grid()
        blur = ChromaticBlurModel.for_grid(grid, FusionConfig())
        sig = np.asarray(blur.sigmas)
        assert sig[0] > sig[2] > 0.0  # 450 blurrier than 490

    def test_grid_mismatch_rejected(self):
        blur = ChromaticBlurModel.for_grid(vnir_grid(), FusionConfig())
        cube = SpectralCube(4, 4, swir_grid(), np.full((4, 4, 26), 0.5))
        with pytest.raises(ContractError):
            blur.apply(cube)


def test_flat_reference_scene_fuses_flat(rig, fields, grids, illum, sensor):
    # end-to-end on a diffuse reference plane: reconstruct both views with
    # ground-truth depth, align and merge; every fused band stays at 0.99
    from specscan.core import DepthMap, default_scan_angles
    from specscan.forward import render_scan_stack
    from specscan.recon import ReconConfig, reconstruct_reflectance

    angles = default_scan_angles()
    cubes = {}
    depths = {}
    for cam in (Camera.VNIR, Camera.SWIR):
        grid = grids[cam]
        plane = SpectralCube(32, 32, grid, np.full((32, 32, grid.count), 0.99))
        depths[cam] = DepthMap.full(32, 32, 0.5)
        stack = render_scan_stack(plane, depths[cam], fields[cam], illum, sensor, angles)
        cubes[cam] = reconstruct_reflectance(
            stack, depths[cam], fields[cam], illum, sensor, grid,
            ReconConfig(max_iter=250, tol=1e-10),
        )
    aligned = align_swir_to_vnir(cubes[Camera.SWIR], depths[Camera.VNIR], depths[Camera.SWIR], rig)
    fused, swir_ok = merge_cubes(cubes[Camera.VNIR], aligned)
    assert fused.grid.count == 48
    sel = fused.valid_mask & swir_ok
    assert sel.mean() > 0.5
    assert np.max(np.abs(fused.data[sel] - 0.99)) < 0.01


def test_fusion_config_validation():
    with pytest.raises(ConfigError):
        FusionConfig(depth_threshold_m=0.0)
    with pytest.raises(ConfigError):
        FusionConfig(merge_rule="nope")
    with pytest.raises(ConfigError):
        FusionConfig(guide_vnir=(900.0, 500.0))
