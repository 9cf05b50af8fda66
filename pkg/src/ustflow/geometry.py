"""Structured spatial mesh generators for verification cases.

Boxes, disks and annuli only; the stirrer meshes are unstructured fixtures
shipped as package data (see tools/make_stirrer_meshes.py).
"""

from __future__ import annotations

import numpy as np

from .extrude import extrude_spatial
from .mesh import SimplexMesh


def box2d(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0,
          x0: float = 0.0, y0: float = 0.0) -> SimplexMesh:
    """Triangulated rectangle; side tags x0, x1, y0, y1."""
    xs = np.linspace(x0, x0 + lx, nx + 1)
    ys = np.linspace(y0, y0 + ly, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    tris = np.array(tris, dtype=np.int64)

    tag_names = ["x0", "x1", "y0", "y1"]
    facets, tags = [], []
    for j in range(ny):
        facets.append((nid(0, j), nid(0, j + 1))); tags.append(0)
        facets.append((nid(nx, j), nid(nx, j + 1))); tags.append(1)
    for i in range(nx):
        facets.append((nid(i, 0), nid(i + 1, 0))); tags.append(2)
        facets.append((nid(i, ny), nid(i + 1, ny))); tags.append(3)
    return SimplexMesh(nodes, tris, np.array(facets), np.array(tags), tag_names)


def annulus2d(r_inner: float, r_outer: float, n_r: int, n_theta: int) -> SimplexMesh:
    """Structured annulus; tags inner, outer."""
    radii = np.linspace(r_inner, r_outer, n_r + 1)
    angles = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)

    def nid(i, j):
        return i * n_theta + (j % n_theta)

    nodes = np.empty(((n_r + 1) * n_theta, 2))
    for i, r in enumerate(radii):
        nodes[i * n_theta: (i + 1) * n_theta, 0] = r * np.cos(angles)
        nodes[i * n_theta: (i + 1) * n_theta, 1] = r * np.sin(angles)

    tris = []
    for i in range(n_r):
        for j in range(n_theta):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    tris = np.array(tris, dtype=np.int64)

    tag_names = ["inner", "outer"]
    facets, tags = [], []
    for j in range(n_theta):
        facets.append((nid(0, j), nid(0, j + 1))); tags.append(0)
        facets.append((nid(n_r, j), nid(n_r, j + 1))); tags.append(1)
    return SimplexMesh(nodes, tris, np.array(facets), np.array(tags), tag_names)


def disk2d(radius: float, n_r: int, n_theta: int) -> SimplexMesh:
    """Structured disk with a center fan; tag outer."""
    radii = np.linspace(0.0, radius, n_r + 1)[1:]
    angles = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)

    nodes = [np.zeros((1, 2))]
    for r in radii:
        nodes.append(np.column_stack([r * np.cos(angles), r * np.sin(angles)]))
    nodes = np.vstack(nodes)

    def nid(i, j):
        return 1 + i * n_theta + (j % n_theta)

    tris = []
    for j in range(n_theta):
        tris.append((0, nid(0, j), nid(0, j + 1)))
    for i in range(n_r - 1):
        for j in range(n_theta):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    tris = np.array(tris, dtype=np.int64)

    facets, tags = [], []
    for j in range(n_theta):
        facets.append((nid(n_r - 1, j), nid(n_r - 1, j + 1))); tags.append(0)
    return SimplexMesh(nodes, tris, np.array(facets), np.array(tags), ["outer"])


def box3d(nx: int, ny: int, nz: int, lx: float = 1.0, ly: float = 1.0,
          lz: float = 1.0) -> SimplexMesh:
    """Tetrahedral box from a z-extruded 2D grid; tags x0, x1, y0, y1, z0, z1."""
    base = box2d(nx, ny, lx=lx, ly=ly)
    return extrude_spatial(base, 0.0, lz, nz, lo_tag="z0", hi_tag="z1")
