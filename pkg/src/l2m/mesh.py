"""Triangle mesh container and normal estimation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray        # (V, 3) float64, meters
    faces: np.ndarray           # (F, 3) int64
    vertex_colors: np.ndarray   # (V, 3) linear RGB
    vertex_normals: np.ndarray  # (V, 3) unit vectors

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        c = np.asarray(self.vertex_colors, dtype=np.float64).reshape(-1, 3)
        n = np.asarray(self.vertex_normals, dtype=np.float64).reshape(-1, 3)
        if len(c) != len(v) or len(n) != len(v):
            raise InputError("vertex attribute arrays must match the vertex count")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise InputError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "vertex_colors", c)
        object.__setattr__(self, "vertex_normals", n)

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def transformed(self, rotation, translation=(0.0, 0.0, 0.0)) -> TriMesh:
        r = np.asarray(rotation, dtype=float)
        return replace(
            self,
            vertices=self.vertices @ r.T + np.asarray(translation, dtype=float),
            vertex_normals=self.vertex_normals @ r.T,
        )


def face_normals(vertices, faces, normalize=True) -> np.ndarray:
    v0 = vertices[faces[:, 0]]
    n = np.cross(vertices[faces[:, 1]] - v0, vertices[faces[:, 2]] - v0)
    if normalize:
        n = n / np.linalg.norm(n, axis=1, keepdims=True)
    return n


def face_areas(vertices, faces) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_normals(vertices, faces, normalize=False), axis=1)


def vertex_normals(mesh: TriMesh) -> TriMesh:
    """Return ``mesh`` with area-weighted vertex normals.

    Normals are oriented toward the coordinate origin (the camera the mesh
    was lifted from). Vertices with no incident face get the unit vector
    pointing from the vertex to the origin.
    """
    v, f = mesh.vertices, mesh.faces
    acc = np.zeros_like(v)
    if len(f):
        # The raw cross product has magnitude 2 * area, which is the weighting we want.
        fn = face_normals(v, f, normalize=False)
        for corner in range(3):
            np.add.at(acc, f[:, corner], fn)
    norm = np.linalg.norm(acc, axis=1)
    isolated = norm < 1e-300
    out = np.empty_like(v)
    out[~isolated] = acc[~isolated] / norm[~isolated, None]
    to_origin = -v[isolated]
    lens = np.linalg.norm(to_origin, axis=1, keepdims=True)
    fallback = np.tile([0.0, 0.0, -1.0], (len(to_origin), 1))
    ok = lens[:, 0] > 0
    fallback[ok] = to_origin[ok] / lens[ok]
    out[isolated] = fallback
    away = np.einsum("ij,ij->i", out, v) > 0
    out[away] = -out[away]
    return replace(mesh, vertex_normals=out)
