"""Power diagrams restricted to a triangle soup.

Each triangle is clipped independently against the power bisectors of the
competing sites, producing convex polygonal cell pieces whose edges remember
which bisector (or triangle boundary) created them.  Accumulated per site:
density mass, area, first moment, and optionally the integral of
rho(x) |x - y_i|^2.  Interface records collect, per site pair and triangle,
the density line-integral along the shared boundary and the norm of the
in-plane component of the site difference; these are the ingredients of the
transport Jacobian.

Candidate sites per triangle come from a sound power-distance bound: a site
is kept when its best possible power value over the triangle's bounding
sphere does not exceed min over sites k of max over the triangle's corners
of power_k.  Every site owning any point of the triangle survives this test,
so pruned and brute-force diagrams coincide.  Brute force is used by default
for small site counts.

Degeneracy checks (both reported through DegenerateConfigurationError):
a bisector plane that coincides with a triangle's plane (the in-plane site
gap vanishes while an interface exists), and an interface recorded against
a cell that is empty everywhere, which happens exactly when the diagram
sits on a kink of the cell-mass map.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateConfigurationError, ValidationError
from .geometry import (MESH_EDGE, ConvexPolygon3, HalfspaceConstraint,
                       _clip_convex, _edge_density_integral, _poly_measures,
                       _tri_precompute)
from .measures import SimplexSoup, SiteSet, as_weights

log = logging.getLogger(__name__)

# Default site count up to which every site is a candidate for every triangle.
BRUTE_FORCE_LIMIT = 64


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _cell_clip(tvt, sites, q, i, cand, eps, v1, t1, v2, t2, dist):
    """Clip triangle tvt down to the power cell of site i among candidates.

    Returns (status, m, src, rival): status 0 on success with m vertices in
    buffer src (1 or 2), status 1 when the polygon lies entirely on the
    bisector plane of (i, rival), status 2 for a zero site difference.
    """
    for k in range(3):
        v1[k, 0] = tvt[k, 0]
        v1[k, 1] = tvt[k, 1]
        v1[k, 2] = tvt[k, 2]
        t1[k] = -1
    m = 3
    src = 1
    for b in range(cand.shape[0]):
        j = cand[b]
        if j == i:
            continue
        nx = sites[j, 0] - sites[i, 0]
        ny = sites[j, 1] - sites[i, 1]
        nz = sites[j, 2] - sites[i, 2]
        lam = 0.5 * (q[j] - q[i])
        nn = (nx * nx + ny * ny + nz * nz) ** 0.5
        if nn == 0.0:
            return 2, m, src, j
        inv = 1.0 / nn
        dmin = np.inf
        dmax = -np.inf
        if src == 1:
            for k in range(m):
                d = (v1[k, 0] * nx + v1[k, 1] * ny + v1[k, 2] * nz) * inv - lam * inv
                if d < dmin:
                    dmin = d
                if d > dmax:
                    dmax = d
        else:
            for k in range(m):
                d = (v2[k, 0] * nx + v2[k, 1] * ny + v2[k, 2] * nz) * inv - lam * inv
                if d < dmin:
                    dmin = d
                if d > dmax:
                    dmax = d
        if dmin >= -eps and dmax <= eps:
            return 1, m, src, j
        if dmax <= eps:
            continue
        if dmin >= -eps:
            return 0, 0, src, -1
        if src == 1:
            m = _clip_convex(v1, t1, m, nx, ny, nz, lam, j, eps, v2, t2, dist)
            src = 2
        else:
            m = _clip_convex(v2, t2, m, nx, ny, nz, lam, j, eps, v1, t1, dist)
            src = 1
        if m <= 0:
            return 0, 0, src, -1
    return 0, m, src, -1


@njit(cache=True)
def _diagram_accumulate(tv, trho, sites, q, cand_flat, cand_off,
                        eps, eps_proj, area_floor, want_cost,
                        masses, areas, moments, costs,
                        rec_owner, rec_rival, rec_tri, rec_int, rec_gap,
                        err_kind, err_i, err_j, err_tri):
    """Sequential sweep over triangles in index order (deterministic sums).

    Returns (n_records, n_errors); records beyond capacity are counted but
    not stored so the caller can retry with larger buffers.
    """
    n_tri = tv.shape[0]
    rec_cap = rec_owner.shape[0]
    err_cap = err_kind.shape[0]
    max_nc = 0
    for t in range(n_tri):
        nc = cand_off[t + 1] - cand_off[t]
        if nc > max_nc:
            max_nc = nc
    cap = max_nc + 8
    v1 = np.empty((cap, 3))
    v2 = np.empty((cap, 3))
    t1 = np.empty(cap, dtype=np.int64)
    t2 = np.empty(cap, dtype=np.int64)
    dist = np.empty(cap)
    nrec = 0
    nerr = 0
    for t in range(n_tri):
        tvt = tv[t]
        d00, d01, d11, inv_den, ux, uy, uz = _tri_precompute(tvt)
        r0 = trho[t, 0]
        r1 = trho[t, 1]
        r2 = trho[t, 2]
        beg = cand_off[t]
        end = cand_off[t + 1]
        for a in range(beg, end):
            i = cand_flat[a]
            status, m, src, rv = _cell_clip(tvt, sites, q, i,
                                            cand_flat[beg:end], eps,
                                            v1, t1, v2, t2, dist)
            if status != 0:
                if nerr < err_cap:
                    err_kind[nerr] = status
                    err_i[nerr] = i
                    err_j[nerr] = rv
                    err_tri[nerr] = t
                nerr += 1
                continue
            if m < 3:
                continue
            verts = v1 if src == 1 else v2
            tags = t1 if src == 1 else t2
            area, mass, mx, my, mz, cost = _poly_measures(
                verts, m, tvt, trho[t],
                sites[i, 0], sites[i, 1], sites[i, 2], want_cost)
            if area <= area_floor:
                continue
            masses[i] += mass
            areas[i] += area
            moments[i, 0] += mx
            moments[i, 1] += my
            moments[i, 2] += mz
            if want_cost:
                costs[i] += cost
            for k in range(m):
                tag = tags[k]
                if tag < 0:
                    continue
                k2 = k + 1
                if k2 == m:
                    k2 = 0
                integral = _edge_density_integral(
                    verts[k, 0], verts[k, 1], verts[k, 2],
                    verts[k2, 0], verts[k2, 1], verts[k2, 2],
                    tvt, d00, d01, d11, inv_den, r0, r1, r2)
                wx = sites[i, 0] - sites[tag, 0]
                wy = sites[i, 1] - sites[tag, 1]
                wz = sites[i, 2] - sites[tag, 2]
                dn = wx * ux + wy * uy + wz * uz
                g2 = wx * wx + wy * wy + wz * wz - dn * dn
                gap = g2 ** 0.5 if g2 > 0.0 else 0.0
                if nrec < rec_cap:
                    rec_owner[nrec] = i
                    rec_rival[nrec] = tag
                    rec_tri[nrec] = t
                    rec_int[nrec] = integral
                    rec_gap[nrec] = gap
                nrec += 1
                if gap <= eps_proj and integral > 0.0:
                    if nerr < err_cap:
                        err_kind[nerr] = 3
                        err_i[nerr] = i
                        err_j[nerr] = tag
                        err_tri[nerr] = t
                    nerr += 1
    return nrec, nerr


@njit(cache=True)
def _triangle_cells(tvt, trho_t, sites, q, cand, eps, area_floor,
                    out_sites, out_len, out_verts, out_tags):
    """Cell polygons of one triangle (geometry export path)."""
    cap = out_verts.shape[1]
    v1 = np.empty((cap, 3))
    v2 = np.empty((cap, 3))
    t1 = np.empty(cap, dtype=np.int64)
    t2 = np.empty(cap, dtype=np.int64)
    dist = np.empty(cap)
    count = 0
    for a in range(cand.shape[0]):
        i = cand[a]
        status, m, src, rv = _cell_clip(tvt, sites, q, i, cand, eps,
                                        v1, t1, v2, t2, dist)
        if status != 0 or m < 3:
            continue
        verts = v1 if src == 1 else v2
        tags = t1 if src == 1 else t2
        area, _, _, _, _, _ = _poly_measures(
            verts, m, tvt, trho_t, 0.0, 0.0, 0.0, False)
        if area <= area_floor:
            continue
        out_sites[count] = i
        out_len[count] = m
        for k in range(m):
            out_verts[count, k, 0] = verts[k, 0]
            out_verts[count, k, 1] = verts[k, 1]
            out_verts[count, k, 2] = verts[k, 2]
            out_tags[count, k] = tags[k]
        count += 1
    return count


# ---------------------------------------------------------------------------
# records and diagram container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InterfaceRecord:
    """Shared-boundary data of a site pair within one triangle.

    integral is the density line-integral along the interface segment;
    projected_gap is the norm of the in-plane component of y_i - y_j on the
    triangle's plane (the denominator of the corresponding Jacobian entry).
    """

    site_i: int
    site_j: int
    triangle: int
    integral: float
    projected_gap: float


@dataclass(eq=False)
class RestrictedLaguerreDiagram:
    """Power diagram of weighted sites restricted to a triangle soup."""

    soup: SimplexSoup
    sites: SiteSet
    weights: np.ndarray
    masses: np.ndarray            # (N,) density mass per cell
    areas: np.ndarray             # (N,) surface area per cell
    moments: np.ndarray           # (N, 3) integral of rho(x) x per cell
    costs: np.ndarray | None      # (N,) integral of rho(x) |x - y_i|^2
    records: list[InterfaceRecord]
    cells: list[list[tuple[int, ConvexPolygon3]]] | None = None

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def pair_integrals(self) -> dict[tuple[int, int], float]:
        """Total interface integral per unordered site pair."""
        out: dict[tuple[int, int], float] = {}
        for r in self.records:
            key = (r.site_i, r.site_j)
            out[key] = out.get(key, 0.0) + r.integral
        return out


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def bisector_constraint(i: int, j: int, psi, sites: SiteSet) -> HalfspaceConstraint:
    """Half-space where site i beats site j in weighted squared distance.

    {x : <x, y_j - y_i> <= (|y_j|^2 - |y_i|^2 + psi_j - psi_i) / 2}, tagged
    with rival j.
    """
    if i == j:
        raise ValidationError("bisector needs two distinct sites")
    psi = as_weights(psi, sites.n)
    yi = sites.positions[i]
    yj = sites.positions[j]
    if float(np.linalg.norm(yj - yi)) == 0.0:
        raise ValidationError(f"sites {i} and {j} coincide")
    offset = 0.5 * (float(yj @ yj) - float(yi @ yi) + psi[j] - psi[i])
    return HalfspaceConstraint(yj - yi, offset, provenance=j)


def _candidate_lists(soup: SimplexSoup, sites: SiteSet, psi: np.ndarray,
                     prune: bool) -> tuple[np.ndarray, np.ndarray]:
    """Per-triangle candidate site indices as (flat, offsets).

    Pruning keeps site j when its lowest possible power value over the
    triangle's bounding sphere stays within min over k of the max corner
    power of site k; the latter bounds the best power value anywhere on the
    triangle because each power function is convex.
    """
    n_tri = soup.n_triangles
    n = sites.n
    if not prune:
        flat = np.tile(np.arange(n, dtype=np.int64), n_tri)
        off = np.arange(n_tri + 1, dtype=np.int64) * n
        return flat, off

    y = sites.positions
    centers, radii = soup.tri_spheres
    tv = soup.tri_coords
    lo = np.minimum(soup.bbox[0], y.min(axis=0))
    hi = np.maximum(soup.bbox[1], y.max(axis=0))
    scale = float(np.linalg.norm(hi - lo))
    slack = 1e-9 * scale * scale

    chunk = max(1, int(2e6) // max(n, 1))
    parts = []
    counts = np.empty(n_tri, dtype=np.int64)
    for beg in range(0, n_tri, chunk):
        end = min(beg + chunk, n_tri)
        d = np.linalg.norm(centers[beg:end, None, :] - y[None, :, :], axis=2)
        lower = np.maximum(d - radii[beg:end, None], 0.0) ** 2 + psi[None, :]
        corner = ((tv[beg:end, :, None, :] - y[None, None, :, :]) ** 2).sum(axis=3)
        upper = (corner + psi[None, None, :]).max(axis=1).min(axis=1)
        keep = lower <= upper[:, None] + slack
        counts[beg:end] = keep.sum(axis=1)
        parts.append(np.nonzero(keep)[1].astype(np.int64))
    flat = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    off = np.zeros(n_tri + 1, dtype=np.int64)
    np.cumsum(counts, out=off[1:])
    return flat, off


def _scale_of(soup: SimplexSoup, sites: SiteSet) -> float:
    lo = np.minimum(soup.bbox[0], sites.positions.min(axis=0))
    hi = np.maximum(soup.bbox[1], sites.positions.max(axis=0))
    return float(np.linalg.norm(hi - lo))


def compute_diagram(soup: SimplexSoup, sites: SiteSet, psi,
                    *, want_cost: bool = True, want_geometry: bool = False,
                    prune: bool | None = None,
                    check_degeneracies: bool = True) -> RestrictedLaguerreDiagram:
    """Power diagram of the weighted sites restricted to the soup.

    prune=None chooses brute force for small site sets and sphere-bound
    candidate pruning otherwise; the two paths produce identical diagrams.
    Raises DegenerateConfigurationError when the configuration sits on a
    non-differentiable kink (see module docstring) unless
    check_degeneracies is disabled.
    """
    psi = as_weights(psi, sites.n)
    n = sites.n
    if prune is None:
        prune = n > BRUTE_FORCE_LIMIT
    y = sites.positions
    q = (y * y).sum(axis=1) + psi
    flat, off = _candidate_lists(soup, sites, psi, prune)

    eps = soup.eps_geom
    area_floor = eps * eps
    eps_proj = 1e-7 * _scale_of(soup, sites)

    masses = np.zeros(n)
    areas = np.zeros(n)
    moments = np.zeros((n, 3))
    costs = np.zeros(n)
    rec_cap = max(256, 16 * soup.n_triangles)
    err_cap = 64
    while True:
        masses[:] = 0.0
        areas[:] = 0.0
        moments[:] = 0.0
        costs[:] = 0.0
        rec_owner = np.empty(rec_cap, dtype=np.int64)
        rec_rival = np.empty(rec_cap, dtype=np.int64)
        rec_tri = np.empty(rec_cap, dtype=np.int64)
        rec_int = np.empty(rec_cap)
        rec_gap = np.empty(rec_cap)
        err_kind = np.empty(err_cap, dtype=np.int64)
        err_i = np.empty(err_cap, dtype=np.int64)
        err_j = np.empty(err_cap, dtype=np.int64)
        err_tri = np.empty(err_cap, dtype=np.int64)
        nrec, nerr = _diagram_accumulate(
            soup.tri_coords, soup.tri_density, y, q, flat, off,
            eps, eps_proj, area_floor, bool(want_cost),
            masses, areas, moments, costs,
            rec_owner, rec_rival, rec_tri, rec_int, rec_gap,
            err_kind, err_i, err_j, err_tri)
        if nrec <= rec_cap:
            break
        rec_cap = 2 * nrec

    if nerr > 0:
        stored = min(nerr, err_cap)
        if np.any(err_kind[:stored] == 2):
            raise ValidationError("coincident sites reached the diagram kernel")
        pairs = {tuple(sorted((int(err_i[k]), int(err_j[k]))))
                 for k in range(stored)}
        if check_degeneracies:
            raise DegenerateConfigurationError(
                pairs, triangle=int(err_tri[0]),
                message=f"bisector degenerate against triangle plane at pairs "
                        f"{sorted(pairs)}")
        log.warning("ignoring %d degenerate bisector hits", nerr)

    rec_owner = rec_owner[:nrec]
    rec_rival = rec_rival[:nrec]
    rec_tri = rec_tri[:nrec]
    rec_int = rec_int[:nrec]
    rec_gap = rec_gap[:nrec]

    if check_degeneracies and nrec:
        # An interface against a cell that is empty everywhere marks a kink
        # of the cell-mass map (the interface exists only as a boundary tie).
        floor = 100.0 * eps * float(soup.density.max())
        present = areas > 0.0
        suspect = (rec_int > floor) & ~present[rec_rival]
        if np.any(suspect):
            ks = np.flatnonzero(suspect)
            pairs = {tuple(sorted((int(rec_owner[k]), int(rec_rival[k]))))
                     for k in ks}
            raise DegenerateConfigurationError(
                pairs, triangle=int(rec_tri[ks[0]]),
                message=f"interface recorded against empty cells at pairs "
                        f"{sorted(pairs)}")

    keep = rec_owner < rec_rival
    records = [InterfaceRecord(int(rec_owner[k]), int(rec_rival[k]),
                               int(rec_tri[k]), float(rec_int[k]),
                               float(rec_gap[k]))
               for k in np.flatnonzero(keep)]

    cells = None
    if want_geometry:
        cells = []
        tv = soup.tri_coords
        trho = soup.tri_density
        for t in range(soup.n_triangles):
            cand = flat[off[t]:off[t + 1]]
            nc = cand.shape[0]
            cap = nc + 8
            out_sites = np.empty(nc, dtype=np.int64)
            out_len = np.empty(nc, dtype=np.int64)
            out_verts = np.empty((nc, cap, 3))
            out_tags = np.empty((nc, cap), dtype=np.int64)
            cnt = _triangle_cells(tv[t], trho[t], y, q, cand, eps, area_floor,
                                  out_sites, out_len, out_verts, out_tags)
            row = []
            for c in range(cnt):
                m = int(out_len[c])
                row.append((int(out_sites[c]),
                            ConvexPolygon3(out_verts[c, :m].copy(),
                                           out_tags[c, :m].copy(),
                                           parent_triangle=t)))
            cells.append(row)

    return RestrictedLaguerreDiagram(
        soup=soup, sites=sites, weights=psi,
        masses=masses, areas=areas, moments=moments,
        costs=costs if want_cost else None,
        records=records, cells=cells)


def interface_jacobian_entries(
        diagram: RestrictedLaguerreDiagram) -> list[tuple[int, int, float]]:
    """Off-diagonal Jacobian entries (i, j, d mass_i / d psi_j) with i < j.

    Each entry sums, over triangles carrying an (i, j) interface, the
    interface density integral divided by twice the in-plane site gap.  The
    projection factor is evaluated per triangle, inside the sum.
    """
    acc: dict[tuple[int, int], float] = {}
    for r in diagram.records:
        if r.integral == 0.0:
            continue
        key = (r.site_i, r.site_j)
        acc[key] = acc.get(key, 0.0) + r.integral / (2.0 * r.projected_gap)
    return [(i, j, v) for (i, j), v in sorted(acc.items())]


def cell_centroids(diagram: RestrictedLaguerreDiagram) -> np.ndarray:
    """Density-weighted centroid of every cell; empty cells are an error."""
    floor = 1e-12 * max(diagram.total_mass, 0.0)
    bad = np.flatnonzero(diagram.masses <= floor)
    if bad.size:
        raise ValidationError(
            f"cells of sites {bad[:8].tolist()} carry no mass; "
            f"centroids are undefined")
    return diagram.moments / diagram.masses[:, None]
