"""Convex-polygon primitives on mesh triangles.

Low-level geometric kernels shared by the diagram construction: half-space
clipping with provenance-tagged edges, quadrature of affine densities over
convex polygons and segments, tangent-plane projection, and point-to-triangle
distance.  Every polygon lives inside a parent mesh triangle and densities
are affine over that triangle, given by their three vertex values.

The quadrature rules are exact for the polynomial degrees that occur here:
centroid rule (degree 1) for masses, edge-midpoint rule (degree 2) for first
moments, and a symmetric 4-point rule (degree 3) for squared-distance
integrands against an affine density.

Hot paths are compiled with numba; the public functions are thin wrappers
over the same kernels, so the diagram code and these entry points cannot
drift apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import GeometryError

# Edge provenance tag for a boundary edge inherited from the parent triangle.
# Nonnegative tags identify the rival site whose bisector cut the edge.
MESH_EDGE = -1

# Degree-3 symmetric triangle rule (4 points, one negative weight).
_D3_W0 = -27.0 / 48.0
_D3_W1 = 25.0 / 48.0
_D3_A = 3.0 / 5.0
_D3_B = 1.0 / 5.0


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _clip_convex(verts, tags, m, nx, ny, nz, lam, cut_tag, eps,
                 out_verts, out_tags, dist):
    """Clip a convex polygon by the half-space <x, n> <= lam.

    verts (m, 3) and tags (m,) describe the polygon; tags[k] belongs to the
    edge verts[k] -> verts[k+1 mod m].  Vertices within eps of the cut plane
    are snapped onto it (verts is scratch and modified in place).  The
    surviving polygon is written to out_verts / out_tags, new edges along the
    cut receive cut_tag, and the new vertex count is returned (0 when fewer
    than three distinct vertices survive).
    """
    if m < 3:
        return 0
    nn = math.sqrt(nx * nx + ny * ny + nz * nz)
    if nn <= 0.0:
        return -1
    inv = 1.0 / nn
    ux = nx * inv
    uy = ny * inv
    uz = nz * inv
    ulam = lam * inv

    n_neg = 0
    for k in range(m):
        d = verts[k, 0] * ux + verts[k, 1] * uy + verts[k, 2] * uz - ulam
        if -eps <= d <= eps:
            verts[k, 0] -= d * ux
            verts[k, 1] -= d * uy
            verts[k, 2] -= d * uz
            d = 0.0
        if d <= 0.0:
            n_neg += 1
        dist[k] = d
    if n_neg == m:
        # fully inside: unchanged
        for k in range(m):
            out_verts[k, 0] = verts[k, 0]
            out_verts[k, 1] = verts[k, 1]
            out_verts[k, 2] = verts[k, 2]
            out_tags[k] = tags[k]
        return m
    if n_neg == 0:
        return 0

    # Emit kept vertices with the tag of the edge arriving at each of them;
    # the run outside the half-space is bridged by one edge tagged cut_tag.
    mo = 0
    for k in range(m):
        k2 = k + 1
        if k2 == m:
            k2 = 0
        da = dist[k]
        db = dist[k2]
        t = tags[k]
        if da <= 0.0:
            if db <= 0.0:
                out_verts[mo, 0] = verts[k2, 0]
                out_verts[mo, 1] = verts[k2, 1]
                out_verts[mo, 2] = verts[k2, 2]
                out_tags[mo] = t
                mo += 1
            else:
                s = da / (da - db)
                out_verts[mo, 0] = verts[k, 0] + s * (verts[k2, 0] - verts[k, 0])
                out_verts[mo, 1] = verts[k, 1] + s * (verts[k2, 1] - verts[k, 1])
                out_verts[mo, 2] = verts[k, 2] + s * (verts[k2, 2] - verts[k, 2])
                out_tags[mo] = t
                mo += 1
        else:
            if db <= 0.0:
                s = da / (da - db)
                out_verts[mo, 0] = verts[k, 0] + s * (verts[k2, 0] - verts[k, 0])
                out_verts[mo, 1] = verts[k, 1] + s * (verts[k2, 1] - verts[k, 1])
                out_verts[mo, 2] = verts[k, 2] + s * (verts[k2, 2] - verts[k, 2])
                out_tags[mo] = cut_tag
                mo += 1
                out_verts[mo, 0] = verts[k2, 0]
                out_verts[mo, 1] = verts[k2, 1]
                out_verts[mo, 2] = verts[k2, 2]
                out_tags[mo] = t
                mo += 1

    # Drop vertices that coincide with their predecessor (keeps the first
    # arriving tag, which is the surviving zero-length-free edge).
    eps2 = eps * eps
    mk = 0
    for j in range(mo):
        if mk > 0:
            dx = out_verts[j, 0] - out_verts[mk - 1, 0]
            dy = out_verts[j, 1] - out_verts[mk - 1, 1]
            dz = out_verts[j, 2] - out_verts[mk - 1, 2]
            if dx * dx + dy * dy + dz * dz <= eps2:
                continue
        out_verts[mk, 0] = out_verts[j, 0]
        out_verts[mk, 1] = out_verts[j, 1]
        out_verts[mk, 2] = out_verts[j, 2]
        out_tags[mk] = out_tags[j]
        mk += 1
    if mk >= 2:
        dx = out_verts[0, 0] - out_verts[mk - 1, 0]
        dy = out_verts[0, 1] - out_verts[mk - 1, 1]
        dz = out_verts[0, 2] - out_verts[mk - 1, 2]
        if dx * dx + dy * dy + dz * dz <= eps2:
            for j in range(1, mk):
                out_verts[j - 1, 0] = out_verts[j, 0]
                out_verts[j - 1, 1] = out_verts[j, 1]
                out_verts[j - 1, 2] = out_verts[j, 2]
                out_tags[j - 1] = out_tags[j]
            mk -= 1
    if mk < 3:
        return 0
    # Arriving tags -> departing tags: tag k now describes edge k -> k+1.
    a0 = out_tags[0]
    for j in range(mk - 1):
        out_tags[j] = out_tags[j + 1]
    out_tags[mk - 1] = a0
    return mk


@njit(cache=True, inline="always")
def _affine_at(px, py, pz, tri, d00, d01, d11, inv_den, r0, r1, r2):
    """Barycentric evaluation of the affine density at a point of the plane."""
    w0x = px - tri[0, 0]
    w0y = py - tri[0, 1]
    w0z = pz - tri[0, 2]
    a20 = (w0x * (tri[1, 0] - tri[0, 0]) + w0y * (tri[1, 1] - tri[0, 1])
           + w0z * (tri[1, 2] - tri[0, 2]))
    a21 = (w0x * (tri[2, 0] - tri[0, 0]) + w0y * (tri[2, 1] - tri[0, 1])
           + w0z * (tri[2, 2] - tri[0, 2]))
    b1 = (d11 * a20 - d01 * a21) * inv_den
    b2 = (d00 * a21 - d01 * a20) * inv_den
    return (1.0 - b1 - b2) * r0 + b1 * r1 + b2 * r2


@njit(cache=True)
def _tri_precompute(tri):
    """Gram data of a triangle for barycentric evaluation, plus unit normal."""
    e0x = tri[1, 0] - tri[0, 0]
    e0y = tri[1, 1] - tri[0, 1]
    e0z = tri[1, 2] - tri[0, 2]
    e1x = tri[2, 0] - tri[0, 0]
    e1y = tri[2, 1] - tri[0, 1]
    e1z = tri[2, 2] - tri[0, 2]
    d00 = e0x * e0x + e0y * e0y + e0z * e0z
    d01 = e0x * e1x + e0y * e1y + e0z * e1z
    d11 = e1x * e1x + e1y * e1y + e1z * e1z
    den = d00 * d11 - d01 * d01
    inv_den = 1.0 / den if den > 0.0 else 0.0
    cx = e0y * e1z - e0z * e1y
    cy = e0z * e1x - e0x * e1z
    cz = e0x * e1y - e0y * e1x
    cn = math.sqrt(cx * cx + cy * cy + cz * cz)
    if cn > 0.0:
        cx /= cn
        cy /= cn
        cz /= cn
    return d00, d01, d11, inv_den, cx, cy, cz


@njit(cache=True)
def _poly_measures(verts, m, tri, rho, yx, yy, yz, want_cost):
    """Fan quadrature over a convex polygon inside a parent triangle.

    Returns (area, mass, mx, my, mz, cost): signed area and density mass,
    the first moment of the density, and, when want_cost is set, the
    integral of rho(x) * |x - y|^2.  Signs follow the fan orientation
    against the parent triangle's normal.
    """
    if m < 3:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    d00, d01, d11, inv_den, ux, uy, uz = _tri_precompute(tri)
    r0 = rho[0]
    r1 = rho[1]
    r2 = rho[2]
    area = 0.0
    mass = 0.0
    mx = 0.0
    my = 0.0
    mz = 0.0
    cost = 0.0
    ax = verts[0, 0]
    ay = verts[0, 1]
    az = verts[0, 2]
    for j in range(1, m - 1):
        bx = verts[j, 0]
        by = verts[j, 1]
        bz = verts[j, 2]
        cx = verts[j + 1, 0]
        cy = verts[j + 1, 1]
        cz = verts[j + 1, 2]
        e0x = bx - ax
        e0y = by - ay
        e0z = bz - az
        e1x = cx - ax
        e1y = cy - ay
        e1z = cz - az
        crx = e0y * e1z - e0z * e1y
        cry = e0z * e1x - e0x * e1z
        crz = e0x * e1y - e0y * e1x
        a_signed = 0.5 * (crx * ux + cry * uy + crz * uz)
        area += a_signed

        gx = (ax + bx + cx) / 3.0
        gy = (ay + by + cy) / 3.0
        gz = (az + bz + cz) / 3.0
        rg = _affine_at(gx, gy, gz, tri, d00, d01, d11, inv_den, r0, r1, r2)
        mass += a_signed * rg

        # first moment, midpoint rule (exact for quadratic integrands)
        third = a_signed / 3.0
        px = 0.5 * (ax + bx)
        py = 0.5 * (ay + by)
        pz = 0.5 * (az + bz)
        rv = _affine_at(px, py, pz, tri, d00, d01, d11, inv_den, r0, r1, r2)
        mx += third * rv * px
        my += third * rv * py
        mz += third * rv * pz
        px = 0.5 * (bx + cx)
        py = 0.5 * (by + cy)
        pz = 0.5 * (bz + cz)
        rv = _affine_at(px, py, pz, tri, d00, d01, d11, inv_den, r0, r1, r2)
        mx += third * rv * px
        my += third * rv * py
        mz += third * rv * pz
        px = 0.5 * (cx + ax)
        py = 0.5 * (cy + ay)
        pz = 0.5 * (cz + az)
        rv = _affine_at(px, py, pz, tri, d00, d01, d11, inv_den, r0, r1, r2)
        mx += third * rv * px
        my += third * rv * py
        mz += third * rv * pz

        if want_cost:
            dx = gx - yx
            dy = gy - yy
            dz = gz - yz
            acc = _D3_W0 * rg * (dx * dx + dy * dy + dz * dz)
            for q in range(3):
                if q == 0:
                    px = _D3_A * ax + _D3_B * bx + _D3_B * cx
                    py = _D3_A * ay + _D3_B * by + _D3_B * cy
                    pz = _D3_A * az + _D3_B * bz + _D3_B * cz
                elif q == 1:
                    px = _D3_B * ax + _D3_A * bx + _D3_B * cx
                    py = _D3_B * ay + _D3_A * by + _D3_B * cy
                    pz = _D3_B * az + _D3_A * bz + _D3_B * cz
                else:
                    px = _D3_B * ax + _D3_B * bx + _D3_A * cx
                    py = _D3_B * ay + _D3_B * by + _D3_A * cy
                    pz = _D3_B * az + _D3_B * bz + _D3_A * cz
                rv = _affine_at(px, py, pz, tri, d00, d01, d11, inv_den, r0, r1, r2)
                dx = px - yx
                dy = py - yy
                dz = pz - yz
                acc += _D3_W1 * rv * (dx * dx + dy * dy + dz * dz)
            cost += a_signed * acc
    return area, mass, mx, my, mz, cost


@njit(cache=True)
def _edge_density_integral(axx, ayy, azz, bxx, byy, bzz, tri,
                           d00, d01, d11, inv_den, r0, r1, r2):
    """Integral of the affine density along segment a-b (trapezoid, exact)."""
    dx = bxx - axx
    dy = byy - ayy
    dz = bzz - azz
    length = math.sqrt(dx * dx + dy * dy + dz * dz)
    ra = _affine_at(axx, ayy, azz, tri, d00, d01, d11, inv_den, r0, r1, r2)
    rb = _affine_at(bxx, byy, bzz, tri, d00, d01, d11, inv_den, r0, r1, r2)
    return length * 0.5 * (ra + rb)


@njit(cache=True)
def _point_triangle_dist2(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Squared distance from a point to a triangle (region classification)."""
    abx = bx - ax
    aby = by - ay
    abz = bz - az
    acx = cx - ax
    acy = cy - ay
    acz = cz - az
    apx = px - ax
    apy = py - ay
    apz = pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz
    bpx = px - bx
    bpy = py - by
    bpz = pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        qx = ax + v * abx - px
        qy = ay + v * aby - py
        qz = az + v * abz - pz
        return qx * qx + qy * qy + qz * qz
    cpx = px - cx
    cpy = py - cy
    cpz = pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        qx = ax + w * acx - px
        qy = ay + w * acy - py
        qz = az + w * acz - pz
        return qx * qx + qy * qy + qz * qz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        qx = bx + w * (cx - bx) - px
        qy = by + w * (cy - by) - py
        qz = bz + w * (cz - bz) - pz
        return qx * qx + qy * qy + qz * qz
    den = 1.0 / (va + vb + vc)
    v = vb * den
    w = vc * den
    qx = ax + abx * v + acx * w - px
    qy = ay + aby * v + acy * w - py
    qz = az + abz * v + acz * w - pz
    return qx * qx + qy * qy + qz * qz


# ---------------------------------------------------------------------------
# public types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HalfspaceConstraint:
    """The half-space {x : <x, normal> <= offset} with edge provenance.

    provenance is MESH_EDGE for triangle boundary, or the index of the rival
    site whose bisector generated the cut.
    """

    normal: np.ndarray
    offset: float
    provenance: int = MESH_EDGE


@dataclass(eq=False)
class ConvexPolygon3:
    """A planar convex polygon inside a parent mesh triangle.

    edge_tags[k] is the provenance of the edge vertices[k] -> vertices[k+1]
    (cyclically): MESH_EDGE for inherited triangle boundary, or the rival
    site index for a bisector cut.
    """

    vertices: np.ndarray
    edge_tags: np.ndarray
    parent_triangle: int = -1

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.edge_tags = np.asarray(self.edge_tags, dtype=np.int64).reshape(-1)
        if self.edge_tags.shape[0] != self.vertices.shape[0]:
            raise GeometryError("one edge tag required per polygon vertex")

    def __len__(self) -> int:
        return self.vertices.shape[0]

    @property
    def is_empty(self) -> bool:
        return self.vertices.shape[0] < 3

    def area(self) -> float:
        """Unsigned area from the Newell normal of the vertex loop."""
        v = self.vertices
        if v.shape[0] < 3:
            return 0.0
        n = np.cross(v, np.roll(v, -1, axis=0)).sum(axis=0)
        return 0.5 * float(np.linalg.norm(n))


def empty_polygon(parent_triangle: int = -1) -> ConvexPolygon3:
    return ConvexPolygon3(np.zeros((0, 3)), np.zeros(0, dtype=np.int64),
                          parent_triangle)


@dataclass(eq=False)
class AffineDensity:
    """Density that is affine over one triangle, given by its vertex values."""

    triangle: np.ndarray   # (3, 3) vertex positions
    values: np.ndarray     # (3,) nonnegative values at those vertices

    def __post_init__(self):
        self.triangle = np.asarray(self.triangle, dtype=np.float64).reshape(3, 3)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(3)

    def at(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at points (..., 3) by barycentric interpolation."""
        p = np.asarray(points, dtype=np.float64)
        squeeze = p.ndim == 1
        p = p.reshape(-1, 3)
        a, b, c = self.triangle
        e0 = b - a
        e1 = c - a
        d00 = e0 @ e0
        d01 = e0 @ e1
        d11 = e1 @ e1
        den = d00 * d11 - d01 * d01
        if den <= 0.0:
            raise GeometryError("degenerate parent triangle in density evaluation")
        w = p - a
        a20 = w @ e0
        a21 = w @ e1
        b1 = (d11 * a20 - d01 * a21) / den
        b2 = (d00 * a21 - d01 * a20) / den
        out = (1.0 - b1 - b2) * self.values[0] + b1 * self.values[1] + b2 * self.values[2]
        return float(out[0]) if squeeze else out


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _polygon_eps(polygon: ConvexPolygon3) -> float:
    v = polygon.vertices
    if v.shape[0] == 0:
        return 0.0
    diag = float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))
    return 1e-9 * diag


def clip_polygon(polygon: ConvexPolygon3, halfspace: HalfspaceConstraint,
                 eps: float | None = None) -> ConvexPolygon3:
    """Intersect a convex polygon with a half-space.

    Vertices within eps of the cut plane are snapped onto it; the default eps
    is 1e-9 times the polygon's bounding-box diagonal.  New edges created by
    the cut carry the half-space's provenance tag.  Returns an empty polygon
    when fewer than three distinct vertices survive.
    """
    n = np.asarray(halfspace.normal, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(n)) or float(n @ n) == 0.0:
        raise GeometryError("half-space normal must be finite and nonzero")
    if polygon.is_empty:
        return empty_polygon(polygon.parent_triangle)
    if eps is None:
        eps = _polygon_eps(polygon)
    m = len(polygon)
    cap = 2 * m + 4
    work_v = np.empty((cap, 3))
    work_t = np.empty(cap, dtype=np.int64)
    work_v[:m] = polygon.vertices
    work_t[:m] = polygon.edge_tags
    out_v = np.empty((cap, 3))
    out_t = np.empty(cap, dtype=np.int64)
    dist = np.empty(cap)
    mo = _clip_convex(work_v, work_t, m, n[0], n[1], n[2],
                      float(halfspace.offset), int(halfspace.provenance),
                      float(eps), out_v, out_t, dist)
    if mo <= 0:
        return empty_polygon(polygon.parent_triangle)
    return ConvexPolygon3(out_v[:mo].copy(), out_t[:mo].copy(),
                          polygon.parent_triangle)


def tangent_projection(vector: np.ndarray, triangle: np.ndarray) -> np.ndarray:
    """Project a vector onto the plane spanned by a triangle's edges."""
    v = np.asarray(vector, dtype=np.float64).reshape(3)
    tri = np.asarray(triangle, dtype=np.float64).reshape(3, 3)
    n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    nn = float(np.linalg.norm(n))
    scale = max(float(np.linalg.norm(tri[1] - tri[0])),
                float(np.linalg.norm(tri[2] - tri[0])))
    if nn <= 1e-14 * scale * scale:
        raise GeometryError("degenerate triangle has no tangent plane")
    n = n / nn
    return v - float(v @ n) * n


def _measures(polygon: ConvexPolygon3, density: AffineDensity,
              target=None):
    tri = density.triangle
    y = (np.zeros(3) if target is None
         else np.asarray(target, dtype=np.float64).reshape(3))
    area, mass, mx, my, mz, cost = _poly_measures(
        np.ascontiguousarray(polygon.vertices), len(polygon),
        np.ascontiguousarray(tri), np.ascontiguousarray(density.values),
        y[0], y[1], y[2], target is not None)
    if area < 0.0:
        area, mass, mx, my, mz, cost = -area, -mass, -mx, -my, -mz, -cost
    return area, mass, np.array([mx, my, mz]), cost


def integrate_affine_area(polygon: ConvexPolygon3,
                          density: AffineDensity) -> float:
    """Integral of the affine density over the polygon (exact)."""
    if polygon.is_empty:
        return 0.0
    return float(_measures(polygon, density)[1])


def integrate_quadratic_cost(polygon: ConvexPolygon3, density: AffineDensity,
                             target: np.ndarray) -> float:
    """Integral of rho(x) |x - target|^2 over the polygon (exact)."""
    if polygon.is_empty:
        return 0.0
    return float(_measures(polygon, density, target)[3])


def integrate_affine_edge(a: np.ndarray, b: np.ndarray,
                          density: AffineDensity) -> float:
    """Line integral of the affine density along the segment a-b (exact)."""
    a = np.asarray(a, dtype=np.float64).reshape(3)
    b = np.asarray(b, dtype=np.float64).reshape(3)
    tri = np.ascontiguousarray(density.triangle)
    d00, d01, d11, inv_den, _, _, _ = _tri_precompute(tri)
    return float(_edge_density_integral(
        a[0], a[1], a[2], b[0], b[1], b[2], tri, d00, d01, d11, inv_den,
        density.values[0], density.values[1], density.values[2]))


def point_triangle_distance(point: np.ndarray, triangle: np.ndarray) -> float:
    """Euclidean distance from a point to a (possibly degenerate) triangle."""
    p = np.asarray(point, dtype=np.float64).reshape(3)
    tri = np.asarray(triangle, dtype=np.float64).reshape(3, 3)
    d2 = _point_triangle_dist2(p[0], p[1], p[2],
                               tri[0, 0], tri[0, 1], tri[0, 2],
                               tri[1, 0], tri[1, 1], tri[1, 2],
                               tri[2, 0], tri[2, 1], tri[2, 2])
    return math.sqrt(max(d2, 0.0))
