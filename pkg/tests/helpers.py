"""Shared geometry builders for the test suite."""

from __future__ import annotations

import numpy as np

from sdot import SimplexSoup


def unit_square(density=None) -> SimplexSoup:
    """Two triangles covering [0,1]^2 in the z=0 plane."""
    vertices = np.array([[0.0, 0.0, 0.0],
                         [1.0, 0.0, 0.0],
                         [1.0, 1.0, 0.0],
                         [0.0, 1.0, 0.0]])
    triangles = np.array([[0, 1, 2], [0, 2, 3]])
    return SimplexSoup(vertices, triangles, density=density)


def unit_right_triangle(density=None) -> SimplexSoup:
    vertices = np.array([[0.0, 0.0, 0.0],
                         [1.0, 0.0, 0.0],
                         [0.0, 1.0, 0.0]])
    return SimplexSoup(vertices, np.array([[0, 1, 2]]), density=density)


def icosphere(subdivisions: int = 2, radius: float = 1.0,
              center=(0.0, 0.0, 0.0)) -> SimplexSoup:
    """Subdivided icosahedron projected to a sphere (20 * 4^s triangles)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
             (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
             (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    cache: dict[tuple[int, int], int] = {}

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        idx = cache.get(key)
        if idx is None:
            m = verts[a] + verts[b]
            verts.append(m / np.linalg.norm(m))
            idx = len(verts) - 1
            cache[key] = idx
        return idx

    for _ in range(subdivisions):
        next_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            next_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = next_faces
    vertices = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return SimplexSoup(vertices, np.array(faces, dtype=np.int64))


def scalene_plate() -> SimplexSoup:
    """Flat quadrilateral with no symmetries; pins all six rigid modes."""
    vertices = np.array([[0.0, 0.0, 0.0],
                         [1.6, 0.0, 0.0],
                         [1.9, 1.0, 0.0],
                         [-0.3, 1.2, 0.0]])
    return SimplexSoup(vertices, np.array([[0, 1, 2], [0, 2, 3]]))


def vertex_contact_soup() -> SimplexSoup:
    """Two unit squares meeting only at the shared vertex (1, 1, 0)."""
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                         [1.0, 1.0, 0.0], [0.0, 1.0, 0.0],
                         [2.0, 1.0, 0.0], [2.0, 2.0, 0.0], [1.0, 2.0, 0.0]])
    triangles = np.array([[0, 1, 2], [0, 2, 3], [2, 4, 5], [2, 5, 6]])
    return SimplexSoup(vertices, triangles)


def curved_patch(nx: int = 6, ny: int = 6, bump: float = 0.3) -> SimplexSoup:
    """Non-flat graph surface z = bump * sin(pi x) * cos(pi y) over [0,1]^2."""
    xs = np.linspace(0.0, 1.0, nx)
    ys = np.linspace(0.0, 1.0, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    gz = bump * np.sin(np.pi * gx) * np.cos(np.pi * gy)
    vertices = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    triangles = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = (i + 1) * ny + j
            triangles += [[a, b, b + 1], [a, b + 1, a + 1]]
    return SimplexSoup(vertices, np.array(triangles, dtype=np.int64))


def write_off(path, vertices, faces) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(vertices)} {len(faces)} 0\n")
        for v in vertices:
            fh.write(f"{v[0]} {v[1]} {v[2]}\n")
        for f in faces:
            fh.write(f"{len(f)} " + " ".join(str(int(i)) for i in f) + "\n")


def grid_quadrature(soup: SimplexSoup, per_triangle: int):
    """Midpoint quadrature on each triangle via uniform barycentric subdivision.

    Returns (points, weights) with weights summing to the total area; used as
    a brute-force oracle for the exact polygon integrals.
    """
    m = per_triangle
    pts, wts = [], []
    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    keep = ii + jj <= m - 1
    iu, ju = ii[keep], jj[keep]
    up = np.column_stack([(3 * iu + 1) / (3 * m), (3 * ju + 1) / (3 * m)])
    keep2 = ii + jj <= m - 2
    idn, jdn = ii[keep2], jj[keep2]
    dn = np.column_stack([(3 * idn + 2) / (3 * m), (3 * jdn + 2) / (3 * m)])
    bary = np.vstack([up, dn])
    for t in range(soup.n_triangles):
        a, b, c = soup.tri_coords[t]
        p = a + bary[:, :1] * (b - a) + bary[:, 1:] * (c - a)
        pts.append(p)
        wts.append(np.full(len(bary), soup.areas[t] / (m * m)))
    return np.vstack(pts), np.concatenate(wts)
