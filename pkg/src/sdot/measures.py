"""Measure containers: triangle soups with affine densities, and point targets.

A SimplexSoup is an indexed triangle set with one nonnegative density value
per vertex; the density is affine over each triangle, so the soup carries a
piecewise-affine surface measure.  A SiteSet is a finite set of pairwise
distinct points with positive target masses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .errors import ValidationError
from .geometry import _point_triangle_dist2

log = logging.getLogger(__name__)

_LEAF_SIZE = 4


# ---------------------------------------------------------------------------
# BVH over triangles (midpoint-split, exact branch-and-bound queries)
# ---------------------------------------------------------------------------

def _build_bvh(tri_coords: np.ndarray):
    """Median-split hierarchy over triangles; returns flat node arrays."""
    t = tri_coords.shape[0]
    lo = tri_coords.min(axis=1)
    hi = tri_coords.max(axis=1)
    centers = tri_coords.mean(axis=1)
    order = np.arange(t, dtype=np.int64)

    bb_lo, bb_hi, lefts, rights, starts, counts = [], [], [], [], [], []

    def rec(beg: int, end: int) -> int:
        node = len(bb_lo)
        idx = order[beg:end]
        bb_lo.append(lo[idx].min(axis=0))
        bb_hi.append(hi[idx].max(axis=0))
        lefts.append(-1)
        rights.append(-1)
        starts.append(beg)
        counts.append(end - beg)
        if end - beg > _LEAF_SIZE:
            c = centers[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            mid = (end - beg) // 2
            part = np.argpartition(c[:, axis], mid)
            order[beg:end] = idx[part]
            lefts[node] = rec(beg, beg + mid)
            rights[node] = rec(beg + mid, end)
        return node

    rec(0, t)
    return (np.asarray(bb_lo), np.asarray(bb_hi),
            np.asarray(lefts, dtype=np.int64), np.asarray(rights, dtype=np.int64),
            np.asarray(starts, dtype=np.int64), np.asarray(counts, dtype=np.int64),
            order)


@njit(cache=True)
def _bvh_distance2(px, py, pz, bb_lo, bb_hi, lefts, rights, starts, counts,
                   order, tv, stack):
    best = np.inf
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        dx = max(bb_lo[node, 0] - px, 0.0, px - bb_hi[node, 0])
        dy = max(bb_lo[node, 1] - py, 0.0, py - bb_hi[node, 1])
        dz = max(bb_lo[node, 2] - pz, 0.0, pz - bb_hi[node, 2])
        if dx * dx + dy * dy + dz * dz >= best:
            continue
        if lefts[node] < 0:
            for k in range(starts[node], starts[node] + counts[node]):
                ti = order[k]
                d2 = _point_triangle_dist2(
                    px, py, pz,
                    tv[ti, 0, 0], tv[ti, 0, 1], tv[ti, 0, 2],
                    tv[ti, 1, 0], tv[ti, 1, 1], tv[ti, 1, 2],
                    tv[ti, 2, 0], tv[ti, 2, 1], tv[ti, 2, 2])
                if d2 < best:
                    best = d2
        else:
            stack[top] = lefts[node]
            top += 1
            stack[top] = rights[node]
            top += 1
    return best


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SimplexSoup:
    """Indexed triangle soup with a per-vertex density (affine per triangle)."""

    vertices: np.ndarray                 # (V, 3) float
    triangles: np.ndarray                # (T, 3) int
    density: np.ndarray | None = None    # (V,) nonnegative; default all ones

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValidationError("soup vertices must have shape (V, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValidationError("soup triangles must have shape (T, 3)")
        if self.triangles.shape[0] == 0:
            raise ValidationError("soup has no triangles")
        if not np.all(np.isfinite(self.vertices)):
            raise ValidationError("soup vertices contain non-finite values")
        v = self.vertices.shape[0]
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=-1) >= v:
            raise ValidationError("triangle vertex index out of range")
        if self.density is None:
            self.density = np.ones(v)
        self.density = np.ascontiguousarray(self.density, dtype=np.float64).reshape(-1)
        if self.density.shape[0] != v:
            raise ValidationError("density must supply one value per vertex")
        if not np.all(np.isfinite(self.density)):
            raise ValidationError("density contains non-finite values")
        neg = np.flatnonzero(self.density < 0)
        if neg.size:
            raise ValidationError(f"density is negative at vertices {neg[:8].tolist()}")
        nz = int(np.count_nonzero(self.density == 0.0))
        if nz:
            log.warning("density vanishes at %d of %d vertices", nz, v)

        floor = self.eps_geom ** 2
        bad = np.flatnonzero(self.areas <= floor)
        if bad.size:
            raise ValidationError(
                f"triangles {bad[:8].tolist()} are degenerate (area <= {floor:g})")
        if self.total_mass <= 0.0:
            raise ValidationError("soup carries zero total mass")

    @cached_property
    def tri_coords(self) -> np.ndarray:
        """Per-triangle vertex coordinates, shape (T, 3, 3)."""
        return np.ascontiguousarray(self.vertices[self.triangles])

    @cached_property
    def tri_density(self) -> np.ndarray:
        return np.ascontiguousarray(self.density[self.triangles])

    @cached_property
    def areas(self) -> np.ndarray:
        c = self.tri_coords
        cr = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return 0.5 * np.linalg.norm(cr, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        """Unit normals; orientation follows the stored vertex order."""
        c = self.tri_coords
        cr = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        n = np.linalg.norm(cr, axis=1, keepdims=True)
        return cr / np.maximum(n, 1e-300)

    @cached_property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def bbox_diag(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    @cached_property
    def eps_geom(self) -> float:
        """Absolute snapping tolerance: 1e-9 of the bounding-box diagonal."""
        return 1e-9 * self.bbox_diag

    @cached_property
    def tri_spheres(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounding spheres per triangle (centroid center, max-vertex radius)."""
        c = self.tri_coords
        centers = c.mean(axis=1)
        radii = np.linalg.norm(c - centers[:, None, :], axis=2).max(axis=1)
        return np.ascontiguousarray(centers), np.ascontiguousarray(radii)

    @cached_property
    def total_mass(self) -> float:
        return float(np.sum(self.areas * self.tri_density.mean(axis=1)))

    @cached_property
    def _bvh(self):
        return _build_bvh(self.tri_coords)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]


@dataclass(eq=False)
class SiteSet:
    """Pairwise-distinct target points with positive masses."""

    positions: np.ndarray          # (N, 3)
    masses: np.ndarray | None = None   # (N,) positive; default uniform 1/N

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions,
                                              dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        if n == 0:
            raise ValidationError("site set is empty")
        if not np.all(np.isfinite(self.positions)):
            raise ValidationError("site positions contain non-finite values")
        if self.masses is None:
            self.masses = np.full(n, 1.0 / n)
        self.masses = np.ascontiguousarray(self.masses, dtype=np.float64).reshape(-1)
        if self.masses.shape[0] != n:
            raise ValidationError("one mass required per site")
        if not np.all(np.isfinite(self.masses)):
            raise ValidationError("site masses contain non-finite values")
        bad = np.flatnonzero(self.masses <= 0)
        if bad.size:
            raise ValidationError(f"site masses must be positive (sites {bad[:8].tolist()})")
        if n > 1:
            lo = self.positions.min(axis=0)
            hi = self.positions.max(axis=0)
            eps = 1e-9 * float(np.linalg.norm(hi - lo))
            d, idx = cKDTree(self.positions).query(self.positions, k=2)
            close = np.flatnonzero(d[:, 1] <= eps)
            if close.size:
                pairs = sorted({tuple(sorted((int(i), int(idx[i, 1]))))
                                for i in close})
                raise ValidationError(f"coincident site positions at pairs {pairs[:8]}")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def scaled_to(self, total: float) -> "SiteSet":
        """Copy with masses rescaled to the requested total."""
        s = float(self.masses.sum())
        if s <= 0:
            raise ValidationError("cannot rescale nonpositive total mass")
        return SiteSet(self.positions.copy(), self.masses * (total / s))


@dataclass
class ConnectivityReport:
    """Triangle-adjacency connectivity of a soup (shared full edges only)."""

    connected: bool
    components: list[np.ndarray]

    @property
    def n_components(self) -> int:
        return len(self.components)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def total_mass(soup: SimplexSoup) -> float:
    """Total measure of the soup (exact for the affine density)."""
    return soup.total_mass


def normalize(soup: SimplexSoup) -> SimplexSoup:
    """Rescale the density so the soup carries unit total mass."""
    m = soup.total_mass
    if m <= 0:
        raise ValidationError("cannot normalize a soup with zero total mass")
    return SimplexSoup(soup.vertices.copy(), soup.triangles.copy(),
                       soup.density / m)


def check_strong_connectedness(soup: SimplexSoup) -> ConnectivityReport:
    """Connectivity of the triangle-adjacency graph.

    Two triangles are adjacent when they share a full edge (an unordered
    vertex-index pair).  Triangles meeting only at a vertex are NOT adjacent:
    mass cannot be traded across a single point, which is exactly the
    configuration that makes the transport system singular.  Index-based
    edges do not detect geometric overlap of unindexed duplicates.
    """
    t = soup.n_triangles
    parent = np.arange(t)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    edges: dict[tuple[int, int], int] = {}
    tris = soup.triangles
    for ti in range(t):
        a, b, c = int(tris[ti, 0]), int(tris[ti, 1]), int(tris[ti, 2])
        for e in ((a, b), (b, c), (c, a)):
            key = (e[0], e[1]) if e[0] < e[1] else (e[1], e[0])
            other = edges.get(key)
            if other is None:
                edges[key] = ti
            else:
                ra, rb = find(ti), find(other)
                if ra != rb:
                    parent[ra] = rb
    roots: dict[int, list[int]] = {}
    for ti in range(t):
        roots.setdefault(find(ti), []).append(ti)
    components = sorted((np.asarray(v, dtype=np.int64) for v in roots.values()),
                        key=lambda a: int(a[0]))
    return ConnectivityReport(connected=len(components) == 1,
                              components=components)


def distance_to_soup(point: np.ndarray, soup: SimplexSoup) -> float | np.ndarray:
    """Exact distance from a point (or batch (M, 3)) to the soup."""
    p = np.asarray(point, dtype=np.float64)
    single = p.ndim == 1
    p = p.reshape(-1, 3)
    bb_lo, bb_hi, lefts, rights, starts, counts, order = soup._bvh
    stack = np.empty(2 * (len(lefts) + 2), dtype=np.int64)
    tv = soup.tri_coords
    out = np.empty(p.shape[0])
    for k in range(p.shape[0]):
        d2 = _bvh_distance2(p[k, 0], p[k, 1], p[k, 2], bb_lo, bb_hi,
                            lefts, rights, starts, counts, order, tv, stack)
        out[k] = np.sqrt(max(d2, 0.0))
    return float(out[0]) if single else out


def sample_on_soup(soup: SimplexSoup, n: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on the soup surface."""
    if n <= 0:
        raise ValidationError("sample count must be positive")
    w = soup.areas / soup.areas.sum()
    tri = rng.choice(soup.n_triangles, size=n, p=w)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    c = soup.tri_coords[tri]
    return (c[:, 0] * (1.0 - u - v)[:, None] + c[:, 1] * u[:, None]
            + c[:, 2] * v[:, None])


def as_weights(psi, n: int) -> np.ndarray:
    """Validate a weight vector: finite floats, one per site."""
    w = np.ascontiguousarray(psi, dtype=np.float64).reshape(-1)
    if w.shape[0] != n:
        raise ValidationError(f"weight vector has length {w.shape[0]}, expected {n}")
    if not np.all(np.isfinite(w)):
        raise ValidationError("weight vector contains non-finite values")
    return w
