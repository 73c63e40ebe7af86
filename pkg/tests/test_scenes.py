import numpy as np
import pytest

from specscan.core import Camera, parallel_rig, spectral_angle
from specscan.errors import ContractError, ValidationError
from specscan.models import ScanGeometry, default_illuminant, default_sensor, truth_fields
from specscan.scenes import (
    make_patch_chart_scene,
    make_staircase_scene,
    make_two_material_scene,
    master_grid,
    render_dataset,
)


@pytest.fixture(scope="module")
def small_rig():
    return parallel_rig(32, 32, focal_px=100.0, baseline_m=0.02)


class TestStaircase:
    def test_two_levels(self, small_rig):
        scene = make_staircase_scene(small_rig, levels=2, base_depth_m=0.4)
        depths = np.unique(scene.depths[Camera.VNIR].depth[scene.depths[Camera.VNIR].valid])
        assert depths.size == 2
        assert np.diff(depths)[0] == pytest.approx(0.020)

    def test_default_five_modes_20mm(self, small_rig):
        scene = make_staircase_scene(small_rig)
        z = scene.depths[Camera.VNIR]
        modes = np.unique(z.depth[z.valid])
        assert modes.size == 5
        assert np.allclose(np.diff(modes), 0.020)
        assert np.allclose(scene.reflectance[Camera.VNIR][z.valid], 0.8)

    def test_epipolar_consistency(self, small_rig):
        # unproject VNIR pixels with their depth, reproject into SWIR: the
        # SWIR depth map must report (nearly) the same surface there
        scene = make_staircase_scene(small_rig)
        zv = scene.depths[Camera.VNIR]
        zs = scene.depths[Camera.SWIR]
        ys, xs = np.mgrid[4:28:4, 4:28:4]
        pts = small_rig.vnir.unproject(xs.astype(float), ys.astype(float), zv.depth[ys, xs])
        u, v, z_pred = small_rig.swir.project(small_rig.vnir_to_swir(pts))
        # same-row epipolar geometry for the parallel rig
        assert np.max(np.abs(v - ys)) < 1e-6
        ui = np.rint(u).astype(int)
        vi = np.rint(v).astype(int)
        inside = (ui >= 0) & (ui < 32)
        observed = zs.depth[vi[inside], ui[inside]]
        # away from tread edges the depths agree exactly
        agree = np.abs(observed - z_pred[inside])
        assert np.median(agree) < 1e-9

    def test_invariants(self, small_rig):
        with pytest.raises(ContractError):
            make_staircase_scene(small_rig, levels=1)
        with pytest.raises(ContractError):
            make_staircase_scene(small_rig, step_height_m=0.0)


class TestPatchChart:
    def test_deterministic_under_seed(self, small_rig):
        a = make_patch_chart_scene(small_rig, seed=9)
        b = make_patch_chart_scene(small_rig, seed=9)
        assert np.array_equal(a.reflectance[Camera.VNIR], b.reflectance[Camera.VNIR])
        assert np.array_equal(a.labels[Camera.SWIR], b.labels[Camera.SWIR])
        c = make_patch_chart_scene(small_rig, seed=10)
        assert not np.array_equal(a.reflectance[Camera.VNIR], c.reflectance[Camera.VNIR])

    def test_patch_spectra_within_bounds(self, small_rig):
        scene = make_patch_chart_scene(small_rig, seed=4)
        spectra = np.asarray(scene.meta["patch_spectra"])
        assert spectra.shape[0] == 24
        assert spectra.min() >= 0.05 and spectra.max() <= 0.95

    def test_pairwise_sam_floor(self, small_rig):
        scene = make_patch_chart_scene(small_rig, seed=4)
        spectra = np.asarray(scene.meta["patch_spectra"])
        for i in range(len(spectra)):
            for j in range(i + 1, len(spectra)):
                assert spectral_angle(spectra[i], spectra[j]) >= 0.05

    def test_all_patches_present(self, small_rig):
        scene = make_patch_chart_scene(small_rig, seed=4)
        labels = scene.labels[Camera.VNIR]
        present = set(np.unique(labels))
        assert set(range(24)).issubset(present)


class TestTwoMaterial:
    def test_split_partitions_exactly(self, small_rig):
        scene = make_two_material_scene(small_rig, split="vertical")
        labels = scene.labels[Camera.VNIR]
        assert set(np.unique(labels)) == {0, 1}
        # left half is material 0, right half material 1 (world x >= 0)
        assert np.all(labels[:, :14] == 0)
        assert np.all(labels[:, 18:] == 1)

    def test_construction_constraints(self, small_rig):
        scene = make_two_material_scene(small_rig)
        bands = scene.grid.array
        a = np.asarray(scene.meta["spectrum_a"])
        b = np.asarray(scene.meta["spectrum_b"])
        visible = bands <= 700.0
        assert spectral_angle(a[visible], b[visible]) < 0.02
        j = int(np.argmin(np.abs(bands - 1450.0)))
        assert abs(a[j] - b[j]) >= 0.3
        assert spectral_angle(a, b) > 0.15

    def test_bad_custom_spectra_rejected(self, small_rig):
        flat = np.full(master_grid().count, 0.5)
        with pytest.raises(ValidationError):
            make_two_material_scene(small_rig, spectrum_a=flat, spectrum_b=flat)


class TestRenderDataset:
    def test_round_trip_and_determinism(self, small_rig, tmp_path):
        from specscan import fileio
        from specscan.core import swir_grid, vnir_grid

        geom = ScanGeometry()
        fields = truth_fields(
            small_rig, geom, {Camera.VNIR: vnir_grid(), Camera.SWIR: swir_grid()}
        )
        illum = default_illuminant()
        sensor = default_sensor(noise_fraction=0.01, exposures=(1.0, 2.0))
        scene = make_staircase_scene(small_rig, texture_amplitude=0.1, seed=2)
        angles = np.linspace(-20.0, 20.0, 21)

        m1 = render_dataset(scene, fields, illum, sensor, angles, [1.0, 2.0], tmp_path / "a", seed=7)
        m2 = render_dataset(scene, fields, illum, sensor, angles, [1.0, 2.0], tmp_path / "b", seed=7)
        s1 = (tmp_path / "a" / "vnir_stack_e0.f32").read_bytes()
        s2 = (tmp_path / "b" / "vnir_stack_e0.f32").read_bytes()
        assert s1 == s2  # same seed, bit-identical render

        # ground-truth files round trip exactly (up to the f32 payload)
        gt = fileio.load_cube(tmp_path / "a" / "gt_cube")
        expected = scene.latent_cube(Camera.VNIR)
        assert np.allclose(gt.data, expected.data.astype(np.float32), atol=0)
        depth = fileio.load_depth(tmp_path / "a" / "gt_depth_vnir")
        assert np.allclose(depth.depth, scene.depths[Camera.VNIR].depth.astype(np.float32))
        labels = fileio.load_labels(tmp_path / "a" / "gt_labels")
        assert np.array_equal(labels, scene.labels[Camera.VNIR])
        assert m1["files"] == m2["files"]

    def test_single_exposure_no_noise_identity(self, small_rig, tmp_path):
        from specscan import fileio
        from specscan.core import swir_grid, vnir_grid

        geom = ScanGeometry()
        fields = truth_fields(small_rig, geom, {Camera.VNIR: vnir_grid(), Camera.SWIR: swir_grid()})
        scene = make_staircase_scene(small_rig, seed=1)
        angles = np.linspace(-20.0, 20.0, 15)
        render_dataset(
            scene, fields, default_illuminant(), default_sensor(), angles, [2.0], tmp_path, seed=0
        )
        raw = fileio.load_stack(tmp_path / "vnir_stack_e0")
        fused = fileio.load_stack(tmp_path / "vnir_hdr")
        assert np.allclose(fused.data, raw.data / 2.0, rtol=1e-6)
