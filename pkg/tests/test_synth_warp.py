import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from l2m import formats
from l2m.camera import Intrinsics, Pose, project_points, unproject_pixels
from l2m.errors import InpaintError, InpaintHookError, InputError
from l2m.lift import DepthMap, PointCloud, lift_to_pointcloud
from l2m.synth_warp import (
    CertaintyMap,
    SplatResult,
    WarpField,
    close_mask,
    compute_gt_warp,
    external_inpaint,
    hole_mask,
    naive_inpaint,
    splat_points,
)
from oracles import brute_splat, closing_direct, quat_from_axis_angle

K = Intrinsics(50.0, 50.0, 31.5, 31.5, 64, 64)


def random_scene(rng, n=800):
    pts = np.column_stack([rng.uniform(-1.5, 1.5, n), rng.uniform(-1.5, 1.5, n), rng.uniform(-0.5, 4.0, n)])
    # A few exact depth ties on shared pixels exercise the index tie-break.
    m = min(20, n // 2)
    pts[n // 2:n // 2 + m] = pts[:m]
    cloud = PointCloud(pts, rng.uniform(0, 1, (n, 3)), np.zeros((n, 2), dtype=np.int64))
    pose = Pose.from_quat(quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 0.3)), rng.normal(scale=0.2, size=3))
    return cloud, pose


class TestSplat:
    @pytest.mark.parametrize("radius", [0, 1, 2])
    def test_matches_brute_force(self, radius):
        rng = np.random.default_rng(radius)
        for _ in range(5):
            cloud, pose = random_scene(rng)
            out = splat_points(cloud, K, pose, radius)
            depth, color, index = brute_splat(cloud.points, cloud.colors, K.matrix, pose.rotation,
                                              pose.translation, 64, 64, radius)
            np.testing.assert_array_equal(out.point_index, index)
            np.testing.assert_array_equal(out.image, color)
            np.testing.assert_array_equal(np.where(out.coverage, out.depth.values, np.inf), depth)

    def test_nearest_wins(self):
        pts = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 1.0]])
        cloud = PointCloud(pts, np.array([[1.0, 0, 0], [0, 1.0, 0]]), np.zeros((2, 2), dtype=np.int64))
        out = splat_points(cloud, Intrinsics(10.0, 10.0, 4.0, 4.0, 9, 9), Pose.identity(), 0)
        assert out.depth.values[4, 4] == 1.0
        np.testing.assert_array_equal(out.image[4, 4], [0, 1, 0])

    def test_identity_radius0_returns_pixels(self, rng):
        img = rng.uniform(0, 1, (64, 64, 3))
        cloud = lift_to_pointcloud(img, DepthMap.from_array(rng.uniform(1, 5, (64, 64))), K)
        out = splat_points(cloud, K, Pose.identity(), 0)
        assert out.coverage.all()
        np.testing.assert_array_equal(out.image, cloud.colors.reshape(64, 64, 3))

    def test_deterministic(self, rng):
        cloud, pose = random_scene(rng)
        a, b = splat_points(cloud, K, pose), splat_points(cloud, K, pose)
        np.testing.assert_array_equal(a.point_index, b.point_index)

    def test_negative_radius(self, rng):
        cloud, pose = random_scene(rng, 10)
        with pytest.raises(InputError):
            splat_points(cloud, K, pose, -1)


def _splat_with_coverage(cov):
    h, w = cov.shape
    return SplatResult(np.zeros((h, w, 3)), DepthMap(np.ones((h, w)), cov), cov, np.where(cov, 0, -1))


class TestHoleMask:
    def test_full_and_zero_coverage(self):
        assert not hole_mask(_splat_with_coverage(np.ones((8, 8), bool))).any()
        assert hole_mask(_splat_with_coverage(np.zeros((8, 8), bool))).all()

    def test_checkerboard_gaps_closed(self):
        cov = (np.add.outer(np.arange(12), np.arange(12)) % 2 == 0)
        holes = hole_mask(_splat_with_coverage(cov), 1)
        np.testing.assert_array_equal(holes, ~closing_direct(cov, 1))
        assert not holes.any()

    @settings(max_examples=40, deadline=None)
    @given(arrays(bool, (10, 13)), st.integers(0, 2))
    def test_matches_direct_morphology(self, cov, radius):
        np.testing.assert_array_equal(close_mask(cov, radius), closing_direct(cov, radius) if radius else cov)

    def test_large_hole_survives(self):
        cov = np.ones((20, 20), bool)
        cov[5:12, 5:12] = False
        assert hole_mask(_splat_with_coverage(cov), 1)[6:11, 6:11].all()


class TestNaiveInpaint:
    def test_empty_mask_unchanged(self, rng):
        img = rng.uniform(0, 1, (6, 7, 3))
        np.testing.assert_array_equal(naive_inpaint(img, np.zeros((6, 7), bool)), img)

    def test_constant_fixed_point(self, rng):
        mask = rng.uniform(size=(16, 16)) < 0.4
        out = naive_inpaint(np.full((16, 16, 3), 0.37), mask)
        np.testing.assert_allclose(out, 0.37, atol=1e-12)

    def test_maximum_principle(self, rng):
        img = np.where(rng.uniform(size=(20, 20, 1)) < 0.5, 0.2, 0.8) * np.ones((1, 1, 3))
        mask = np.zeros((20, 20), bool)
        mask[4:16, 3:17] = True
        out = naive_inpaint(img, mask)
        assert out[mask].min() >= 0.2 - 1e-12 and out[mask].max() <= 0.8 + 1e-12

    def test_unmasked_bit_exact(self, rng):
        img = rng.uniform(0, 1, (16, 16, 3))
        mask = rng.uniform(size=(16, 16)) < 0.3
        out = naive_inpaint(img, mask)
        np.testing.assert_array_equal(out[~mask], img[~mask])

    def test_fully_masked(self):
        with pytest.raises(InpaintError):
            naive_inpaint(np.zeros((4, 4, 3)), np.ones((4, 4), bool))


class TestExternalInpaint:
    @pytest.fixture
    def files(self, tmp_path, rng):
        img = rng.uniform(0, 1, (12, 10, 3))
        formats.write_image(tmp_path / "in.png", img)
        formats.write_mask(tmp_path / "mask.png", np.zeros((12, 10), bool))
        return tmp_path / "in.png", tmp_path / "mask.png"

    def test_copy_command(self, files):
        image, mask = files
        out = external_inpaint(image, mask, "cp {image} {out}")
        np.testing.assert_array_equal(out, formats.read_image(image))

    def test_env_var(self, files, monkeypatch):
        monkeypatch.setenv("L2M_INPAINT_CMD", "cp {image} {out}")
        out = external_inpaint(*files)
        assert out.shape == (12, 10, 3)

    def test_failure_surfaces_stderr(self, files):
        cmd = f"{sys.executable} -c \"import sys; sys.stderr.write('model crashed'); sys.exit(1)\""
        with pytest.raises(InpaintHookError) as exc:
            external_inpaint(*files, cmd)
        assert "model crashed" in exc.value.stderr

    def test_wrong_size(self, files, tmp_path):
        formats.write_image(tmp_path / "small.png", np.zeros((5, 5, 3)))
        with pytest.raises(InpaintHookError, match="size"):
            external_inpaint(*files, f"cp {tmp_path / 'small.png'} {{out}}")

    def test_missing_output(self, files):
        with pytest.raises(InpaintHookError, match="no output"):
            external_inpaint(*files, "true")

    def test_unconfigured(self, files, monkeypatch):
        monkeypatch.delenv("L2M_INPAINT_CMD", raising=False)
        with pytest.raises(InpaintHookError):
            external_inpaint(*files)


class TestGroundTruthWarp:
    def test_identity(self, rng):
        d = DepthMap.from_array(rng.uniform(1, 5, (64, 64)))
        warp, cert = compute_gt_warp(d, K, K, Pose.identity(), d)
        assert warp.valid.all()
        np.testing.assert_allclose(warp.target, WarpField.identity(64, 64).target, atol=1e-9)
        assert np.all(cert.values == 1.0)

    def test_stereo_disparity(self):
        k = Intrinsics(100.0, 100.0, 31.5, 31.5, 64, 64)
        d = DepthMap.from_array(np.ones((64, 64)))
        # camera 2 sits 0.1 m to the right: x_cam2 = x_world - 0.1
        warp, _ = compute_gt_warp(d, k, k, Pose(t=(-0.1, 0.0, 0.0)), d)
        vs, us = np.nonzero(warp.valid)
        np.testing.assert_allclose(warp.target[vs, us, 0], us - 10.0, atol=1e-9)
        np.testing.assert_allclose(warp.target[vs, us, 1], vs, atol=1e-9)
        assert set(np.unique(us)) == set(range(10, 64))

    def test_occluder_masks_pixels(self):
        d1 = DepthMap.from_array(np.full((64, 64), 3.0))
        pose = Pose(t=(-0.2, 0.0, 0.0))
        depth2 = np.full((64, 64), 3.0)
        depth2[20:40, 20:40] = 1.5
        warp, cert = compute_gt_warp(d1, K, K, pose, DepthMap.from_array(depth2))
        # brute-force visibility: compare each projected depth to the 2x2 neighborhood it samples
        vs, us = np.mgrid[0:64, 0:64]
        p = pose.transform(unproject_pixels(us.ravel(), vs.ravel(), np.full(64 * 64, 3.0), K))
        uv, z = project_points(p, K)
        x0, y0 = np.floor(uv[:, 0]).astype(int), np.floor(uv[:, 1]).astype(int)
        inside = (uv[:, 0] >= 0) & (uv[:, 0] <= 63) & (uv[:, 1] >= 0) & (uv[:, 1] <= 63)
        x0, y0 = np.clip(x0, 0, 62), np.clip(y0, 0, 62)
        block = np.stack([depth2[y0, x0], depth2[y0, x0 + 1], depth2[y0 + 1, x0], depth2[y0 + 1, x0 + 1]], 1)
        occluded = inside & np.all(block == 1.5, axis=1)
        visible = inside & np.all(block == 3.0, axis=1)
        c = cert.values.ravel()
        assert occluded.sum() > 100 and np.all(c[occluded] == 0)
        assert np.all(c[visible] == 1)
        assert np.all(c[~inside] == 0)

    def test_targets_in_bounds_and_certainty(self, rng):
        d1 = DepthMap.from_array(rng.uniform(2, 4, (64, 64)))
        d2 = DepthMap.from_array(rng.uniform(2, 4, (64, 64)))
        pose = Pose.from_quat(quat_from_axis_angle([0, 1, 0], 0.1), (0.1, 0.0, 0.05))
        warp, cert = compute_gt_warp(d1, K, K, pose, d2)
        t = warp.target[warp.valid]
        assert np.all((t >= 0) & (t <= 63))
        assert np.all(cert.values[~warp.valid] == 0)
        assert np.all(np.isnan(warp.target[~warp.valid]))

    def test_shape_mismatch(self):
        d = DepthMap.from_array(np.ones((8, 8)))
        with pytest.raises(InputError):
            compute_gt_warp(d, K, K, Pose.identity(), d)

    def test_certainty_range(self):
        with pytest.raises(InputError):
            CertaintyMap(np.full((2, 2), 1.5))
