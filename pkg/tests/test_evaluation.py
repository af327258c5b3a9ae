import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from l2m.camera import Intrinsics
from l2m.errors import EstimationError, InputError
from l2m.evaluation import (
    MatchSet,
    auc,
    decompose_essential,
    endpoint_error,
    estimate_essential_8pt,
    evaluate_pairs,
    load_matches,
    matches_from_warp,
    normalized_coords,
    pose_error,
    ransac_essential,
    sampson_distance,
    save_matches,
)
from l2m.synth_warp import CertaintyMap, WarpField
from oracles import random_pose_matrix, rotation_matrix, synthetic_correspondences

K1 = Intrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
K2 = Intrinsics(450.0, 460.0, 300.0, 250.0, 640, 480)


def angle_between(a, b):
    cos = abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.degrees(math.acos(min(1.0, cos)))


class TestEndpointError:
    def test_exact(self):
        gt = WarpField.identity(8, 9)
        out = endpoint_error(gt, gt, CertaintyMap(np.ones((8, 9))))
        assert out["mean_epe"] == 0.0 and out["pck"][1.0] == 1.0

    def test_uniform_shift(self):
        gt = WarpField.identity(8, 9)
        pred = WarpField(gt.target + [2.0, 0.0], gt.valid)
        out = endpoint_error(pred, gt, CertaintyMap(np.ones((8, 9))))
        assert out["mean_epe"] == pytest.approx(2.0)
        assert out["pck"][1.0] == 0.0 and out["pck"][3.0] == 1.0

    def test_per_pixel_oracle(self, rng):
        gt = WarpField(rng.uniform(0, 30, (10, 12, 2)), rng.uniform(size=(10, 12)) < 0.9)
        pred = WarpField(gt.target + rng.normal(scale=2.0, size=(10, 12, 2)), rng.uniform(size=(10, 12)) < 0.9)
        cert = CertaintyMap((rng.uniform(size=(10, 12)) < 0.8).astype(float))
        out = endpoint_error(pred, gt, cert)
        errs = []
        for y in range(10):
            for x in range(12):
                if pred.valid[y, x] and gt.valid[y, x] and cert.values[y, x] == 1:
                    errs.append(math.dist(pred.target[y, x], gt.target[y, x]))
        assert out["count"] == len(errs)
        assert out["mean_epe"] == pytest.approx(np.mean(errs), rel=1e-12)
        for t in (1.0, 3.0, 5.0):
            assert out["pck"][t] == pytest.approx(np.mean(np.array(errs) <= t))

    def test_no_overlap(self):
        gt = WarpField.identity(4, 4)
        with pytest.raises(InputError):
            endpoint_error(gt, gt, CertaintyMap(np.zeros((4, 4))))


class TestEightPoint:
    def test_pure_x_translation(self, rng):
        pairs = synthetic_correspondences(rng, np.eye(3), np.array([1.0, 0, 0]), K1.matrix, K2.matrix, 30)
        e = estimate_essential_8pt(MatchSet(pairs), K1, K2)
        expected = np.array([[0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]])
        e = e / np.linalg.norm(e) * np.linalg.norm(expected)
        assert min(np.abs(e - expected).max(), np.abs(e + expected).max()) < 1e-6

    def test_random_pose_sampson_and_identities(self, rng):
        for _ in range(20):
            r, t = random_pose_matrix(rng)
            pairs = synthetic_correspondences(rng, r, t, K1.matrix, K2.matrix, 50)
            m = MatchSet(pairs)
            e = estimate_essential_8pt(m, K1, K2)
            d = sampson_distance(e, normalized_coords(pairs[:, :2], K1), normalized_coords(pairs[:, 2:], K2))
            assert d.max() < 1e-9
            assert abs(np.linalg.det(e)) < 1e-8
            assert np.abs(2 * e @ e.T @ e - np.trace(e @ e.T) * e).max() < 1e-8

    def test_scale_invariance(self, rng):
        r, t = random_pose_matrix(rng)
        pairs = synthetic_correspondences(rng, r, t, K1.matrix, K1.matrix, 40)
        e1 = estimate_essential_8pt(MatchSet(pairs), K1, K1)
        k_big = Intrinsics(K1.fx * 2, K1.fy * 2, K1.cx * 2, K1.cy * 2, 1280, 960)
        e2 = estimate_essential_8pt(MatchSet(pairs * 2), k_big, k_big)
        assert min(np.abs(e1 - e2).max(), np.abs(e1 + e2).max()) < 1e-8

    def test_too_few(self, rng):
        with pytest.raises(EstimationError):
            estimate_essential_8pt(MatchSet(rng.uniform(0, 100, (7, 4))), K1, K2)

    def test_degenerate_planar_pure_rotation(self, rng):
        pairs = synthetic_correspondences(rng, rotation_matrix([0, 1, 0], 0.1), np.zeros(3), K1.matrix, K1.matrix, 30)
        with pytest.raises(EstimationError):
            estimate_essential_8pt(MatchSet(pairs), K1, K1)


class TestDecompose:
    def test_recovers_pose(self, rng):
        for _ in range(20):
            r, t = random_pose_matrix(rng)
            m = MatchSet(synthetic_correspondences(rng, r, t, K1.matrix, K2.matrix, 60))
            r_est, t_est = decompose_essential(estimate_essential_8pt(m, K1, K2), m, K1, K2)
            assert np.arccos(np.clip((np.trace(r_est @ r.T) - 1) / 2, -1, 1)) < 1e-4
            assert np.arccos(np.clip(t_est @ t / np.linalg.norm(t), -1, 1)) < 1e-4
            assert abs(np.linalg.norm(t_est) - 1) < 1e-9

    def test_pure_translation(self, rng):
        t = np.array([0.3, -0.1, 0.2])
        m = MatchSet(synthetic_correspondences(rng, np.eye(3), t, K1.matrix, K1.matrix, 40))
        r_est, _ = decompose_essential(estimate_essential_8pt(m, K1, K1), m, K1, K1)
        assert pose_error(r_est, t, np.eye(3), t).rotation_deg < 1e-4


class TestRansac:
    def test_all_inliers(self, rng):
        r, t = random_pose_matrix(rng)
        m = MatchSet(synthetic_correspondences(rng, r, t, K1.matrix, K2.matrix, 100))
        _, mask = ransac_essential(m, K1, K2, rng=0)
        assert mask.all()

    def test_outliers_rejected(self):
        rng = np.random.default_rng(11)
        rejected = total = 0
        for trial in range(10):
            r, t = random_pose_matrix(rng)
            inl = synthetic_correspondences(rng, r, t, K1.matrix, K2.matrix, 80)
            out = np.column_stack([rng.uniform(0, 640, 20), rng.uniform(0, 480, 20),
                                   rng.uniform(0, 640, 20), rng.uniform(0, 480, 20)])
            _, mask = ransac_essential(MatchSet(np.vstack([inl, out])), K1, K2, 0.5, rng=trial)
            assert mask[:80].all()
            rejected += int((~mask[80:]).sum())
            total += 20
        assert rejected / total >= 0.95

    def test_deterministic(self, rng):
        r, t = random_pose_matrix(rng)
        pairs = np.vstack([synthetic_correspondences(rng, r, t, K1.matrix, K2.matrix, 50),
                           rng.uniform(0, 480, (15, 4))])
        e1, m1 = ransac_essential(MatchSet(pairs), K1, K2, rng=5)
        e2, m2 = ransac_essential(MatchSet(pairs), K1, K2, rng=5)
        np.testing.assert_array_equal(e1, e2)
        np.testing.assert_array_equal(m1, m2)

    def test_too_few(self, rng):
        with pytest.raises(EstimationError):
            ransac_essential(MatchSet(rng.uniform(0, 100, (5, 4))), K1, K2)


class TestPoseError:
    def test_examples(self):
        t = np.array([1.0, 0, 0])
        assert pose_error(np.eye(3), t, np.eye(3), t).combined_deg == 0.0
        r10 = rotation_matrix([0, 0, 1], math.radians(10))
        assert pose_error(r10, t, np.eye(3), t).combined_deg == pytest.approx(10.0)
        assert pose_error(np.eye(3), [0, 1.0, 0], np.eye(3), t).translation_deg == pytest.approx(90.0)

    def test_sign_invariance(self, rng):
        r, t = random_pose_matrix(rng)
        t_est = t + rng.normal(scale=0.05, size=3)
        assert pose_error(r, t_est, r, t).translation_deg == pytest.approx(pose_error(r, -t_est, r, -t).translation_deg)
        assert pose_error(r, -t_est, r, t).translation_deg == pytest.approx(pose_error(r, t_est, r, t).translation_deg)


class TestAuc:
    def test_examples(self):
        assert auc([2.5])[5.0] == 50.0
        assert auc([1.0, math.inf])[5.0] == pytest.approx(40.0)
        assert auc([0.0, 0.0]) == {5.0: 100.0, 10.0: 100.0, 20.0: 100.0}

    def test_monotone(self, rng):
        errs = list(rng.uniform(0, 30, 20))
        base = auc(errs)
        for t, v in auc(errs + [0.0]).items():
            assert v >= base[t]
        for t, v in auc(errs + [math.inf]).items():
            assert v <= base[t]

    def test_matches_numeric_integration(self, rng):
        errs = rng.uniform(0, 12, 30)
        grid = np.linspace(0, 10, 200001)
        acc = (errs[None, :] <= grid[:, None]).mean(axis=1)
        assert auc(errs, (10,))[10.0] == pytest.approx(trapezoid(acc, grid) / 10 * 100, abs=1e-2)

    def test_invalid(self):
        with pytest.raises(InputError):
            auc([])
        with pytest.raises(InputError):
            auc([-1.0])


class TestIO:
    def test_match_round_trip(self, tmp_path, rng):
        m = MatchSet(rng.uniform(0, 100, (10, 4)), rng.uniform(0, 1, 10))
        save_matches(m, tmp_path / "m.txt")
        back = load_matches(tmp_path / "m.txt")
        np.testing.assert_array_equal(back.pairs, m.pairs)
        np.testing.assert_array_equal(back.confidence, m.confidence)

    def test_bad_match_file(self, tmp_path):
        (tmp_path / "bad.txt").write_text("1 2 3\n")
        with pytest.raises(InputError):
            load_matches(tmp_path / "bad.txt")

    def test_matches_from_warp(self, rng):
        warp = WarpField(rng.uniform(0, 10, (6, 7, 2)), rng.uniform(size=(6, 7)) < 0.5)
        m = matches_from_warp(warp)
        assert len(m) == warp.valid.sum()
        for u1, v1, u2, v2 in m.pairs:
            np.testing.assert_array_equal(warp.target[int(v1), int(u1)], [u2, v2])
        assert len(matches_from_warp(warp, 3, rng=0)) == 3


class TestEvaluatePairs:
    def test_perfect_and_failed(self, rng):
        r, t = random_pose_matrix(rng)
        good = MatchSet(synthetic_correspondences(rng, r, t, K1.matrix, K2.matrix, 100))
        bad = MatchSet(rng.uniform(0, 100, (5, 4)))
        out = evaluate_pairs([("a", good, K1, K2, r, t), ("b", bad, K1, K2, r, t)])
        assert out["count"] == 2
        assert out["pairs"][0]["status"] == "ok" and out["pairs"][1]["status"] == "failed"
        assert out["auc"]["auc@5"] == pytest.approx(50.0, abs=1e-3)
