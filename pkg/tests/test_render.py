import numpy as np
import pytest

from l2m.camera import Intrinsics, Pose
from l2m.errors import ConfigError
from l2m.mesh import TriMesh, vertex_normals
from l2m.render import PointLight, rasterize, rasterize_attributes, sample_lights
from oracles import moller_trumbore_depth, rotation_matrix

K = Intrinsics(60.0, 60.0, 32.0, 32.0, 64, 64)


def make_mesh(vertices, faces, colors=None):
    v = np.asarray(vertices, dtype=float)
    c = np.ones_like(v) if colors is None else np.asarray(colors, dtype=float)
    return vertex_normals(TriMesh(v, np.asarray(faces), c, np.zeros_like(v)))


def random_triangles(rng, n):
    centers = np.column_stack([rng.uniform(-0.6, 0.6, n), rng.uniform(-0.6, 0.6, n), rng.uniform(1.0, 5.0, n)])
    centers[:, :2] *= centers[:, 2:]
    verts = (centers[:, None, :] + rng.normal(scale=0.25, size=(n, 3, 3)) * centers[:, None, 2:] * 0.5)
    verts[..., 2] = np.maximum(verts[..., 2], 0.3)
    return verts.reshape(-1, 3), np.arange(3 * n).reshape(n, 3)


class TestDepthBuffer:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_ray_intersection(self, seed):
        rng = np.random.default_rng(seed)
        verts, faces = random_triangles(rng, 200)
        depth, _, fid = rasterize_attributes(verts, faces, np.zeros((len(verts), 1)), K)
        oracle = moller_trumbore_depth(verts, faces, K.fx, K.fy, K.cx, K.cy, K.width, K.height)
        both = np.isfinite(depth) & np.isfinite(oracle)
        assert np.max(np.abs(depth[both] - oracle[both])) < 1e-4
        # coverage may only disagree on pixel centers lying exactly on edges
        assert np.mean(np.isfinite(depth) != np.isfinite(oracle)) < 0.01

    def test_nearer_triangle_wins(self):
        big = [[-5, -5], [5, -5], [0, 5]]
        v = [[x * z, y * z, z] for z in (2.0, 1.0) for x, y in big]
        colors = [[0, 0, 1]] * 3 + [[1, 0, 0]] * 3
        out = rasterize(make_mesh(v, [[0, 1, 2], [3, 4, 5]], colors), K, Pose.identity(), shading="albedo")
        assert out.depth.values[32, 32] == pytest.approx(1.0)
        np.testing.assert_allclose(out.image[32, 32], [1, 0, 0])

    def test_shared_edge_no_gaps_no_overlap(self):
        # Two triangles tiling a square: every pixel center covered exactly once.
        v = [[-1, -1, 2], [1, -1, 2], [1, 1, 2], [-1, 1, 2]]
        depth_a, _, fa = rasterize_attributes(np.array(v, float), np.array([[0, 1, 2]]), np.zeros((4, 1)), K)
        depth_b, _, fb = rasterize_attributes(np.array(v, float), np.array([[0, 2, 3]]), np.zeros((4, 1)), K)
        both, _, fboth = rasterize_attributes(np.array(v, float), np.array([[0, 1, 2], [0, 2, 3]]),
                                              np.zeros((4, 1)), K)
        assert not np.any((fa >= 0) & (fb >= 0))
        np.testing.assert_array_equal((fa >= 0) | (fb >= 0), fboth >= 0)

    def test_empty_mesh(self):
        out = rasterize(TriMesh(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3))), K,
                        Pose.identity())
        assert out.is_empty


class TestShading:
    def facing_triangle(self):
        return make_mesh([[-1, -1, 1], [1, -1, 1], [0, 1, 1]], [[0, 2, 1]])

    def test_facing_light_factor(self):
        e = 1e-4
        out = rasterize(self.facing_triangle(), K, Pose.identity(), [PointLight((0, 0, 0), 1000.0)],
                        ambient=0.0, exposure=e)
        np.testing.assert_allclose(out.radiance[32, 32], 1000 * e, rtol=1e-9)

    def test_light_behind_is_black(self):
        out = rasterize(self.facing_triangle(), K, Pose.identity(), [PointLight((0, 0, 3), 1000.0)],
                        ambient=0.0)
        assert out.coverage[32, 32]
        np.testing.assert_array_equal(out.radiance[32, 32], 0.0)

    def test_exposure_is_linear(self, rng):
        verts, faces = random_triangles(rng, 30)
        mesh = make_mesh(verts, faces, rng.uniform(0, 1, verts.shape))
        lights = [PointLight((0.2, -0.1, 0.3), 1500.0, (0.9, 0.8, 1.0))]
        a = rasterize(mesh, K, Pose.identity(), lights, exposure=1e-4)
        b = rasterize(mesh, K, Pose.identity(), lights, exposure=2e-4)
        np.testing.assert_array_equal(b.radiance, 2 * a.radiance)

    def test_rotation_equivariance(self, rng):
        verts, faces = random_triangles(rng, 40)
        mesh = make_mesh(verts, faces, rng.uniform(0, 1, verts.shape))
        lights = [PointLight((0.3, 0.2, 0.5), 2000.0), PointLight((-0.4, 0.1, 1.0), 1000.0, (0.7, 0.8, 0.9))]
        r = rotation_matrix([0.3, 1.0, -0.2], 0.8)
        t = np.array([0.5, -1.0, 2.0])
        moved = mesh.transformed(r, t)
        moved_lights = [PointLight(tuple(r @ np.array(l.position) + t), l.intensity, l.color) for l in lights]
        # Camera follows the scene: world-to-camera is the inverse of (r, t).
        cam = Pose.from_matrix(r.T, -r.T @ t)
        a = rasterize(mesh, K, Pose.identity(), lights)
        b = rasterize(moved, K, cam, moved_lights)
        same = a.coverage & b.coverage & (a.face_index == b.face_index)
        assert same.mean() > 0.9 * a.coverage.mean()
        assert np.max(np.abs(a.radiance[same] - b.radiance[same])) < 1e-5

    def test_unknown_shading(self):
        with pytest.raises(ConfigError):
            rasterize(self.facing_triangle(), K, Pose.identity(), shading="phong")


class TestNormals:
    def test_flat_plane(self, rng):
        xy = rng.uniform(-1, 1, (20, 2))
        v = np.column_stack([xy, np.full(20, 2.0)])
        from scipy.spatial import Delaunay

        mesh = make_mesh(v, Delaunay(xy).simplices)
        np.testing.assert_allclose(mesh.vertex_normals, np.tile([0, 0, -1.0], (20, 1)), atol=1e-6)

    def test_unit_length(self, rng):
        verts, faces = random_triangles(rng, 20)
        n = make_mesh(verts, faces).vertex_normals
        np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-6)

    def test_ridge_bisector(self):
        # Right-angle roof: faces with normals (-1,0,-1)/√2 and (1,0,-1)/√2 meeting along x=0.
        v = [[0, -1, 1], [0, 1, 1], [-1, -1, 2], [-1, 1, 2], [1, -1, 2], [1, 1, 2]]
        f = [[0, 2, 1], [1, 2, 3], [0, 1, 4], [1, 5, 4]]
        mesh = make_mesh(v, f)
        np.testing.assert_allclose(mesh.vertex_normals[0], [0, 0, -1], atol=1e-6)
        np.testing.assert_allclose(mesh.vertex_normals[1], [0, 0, -1], atol=1e-6)


class TestLights:
    def test_default_ranges(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            lights = sample_lights(rng)
            assert 1 <= len(lights) <= 3
            assert all(1000 <= light.intensity <= 3000 for light in lights)

    def test_fixed_count(self, rng):
        assert len(sample_lights(rng, count_range=(1, 1))) == 1

    def test_determinism(self):
        assert sample_lights(np.random.default_rng(4)) == sample_lights(np.random.default_rng(4))

    def test_invalid(self, rng):
        with pytest.raises(ConfigError):
            sample_lights(rng, count_range=(0, 2))
        with pytest.raises(ConfigError):
            PointLight((0, 0, 0), -1.0)
