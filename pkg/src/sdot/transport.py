"""Transport maps, costs, and a small exact linear-programming oracle.

The optimal map sends every soup point to the site whose power distance
|x - y_i|^2 + psi_i is smallest, i.e. to the owner of the cell containing
the point.  The quadratic cost of that map is the sum of the per-cell
integrals of rho(x) |x - y_i|^2, which the diagram already carries.

The oracle discretizes the soup into many small point masses and solves the
resulting finite transport problem exactly with an LP solver.  It is meant
for cross-checking tiny instances, never for production use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from .errors import ValidationError
from .laguerre import compute_diagram
from .measures import SimplexSoup, SiteSet, as_weights

LP_MAX_SITES = 10
LP_MAX_SAMPLES = 5000


def transport_map_eval(points, sites: SiteSet, psi) -> np.ndarray:
    """Index of the site each query point is transported to.

    Ties (points on a cell boundary) go to the lowest site index, matching
    np.argmin.  Accepts a single point or a batch.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != 3:
        raise ValidationError(f"expected 3d points, got shape {pts.shape}")
    psi = as_weights(psi, sites.n)
    # power(x, i) = |x - y_i|^2 + psi_i, expanded to avoid the m x n x 3 blowup
    y = sites.positions
    cross = pts @ y.T
    power = (np.einsum("ij,ij->i", y, y) + psi)[None, :] - 2.0 * cross
    idx = np.argmin(power, axis=1)
    return int(idx[0]) if single else idx


@dataclass
class TransportSummary:
    """Quadratic cost of the optimal map plus per-cell breakdowns."""

    cost: float
    cell_costs: np.ndarray
    cell_masses: np.ndarray


def transport_cost(diagram, sites: SiteSet | None = None) -> TransportSummary:
    """Integral of rho(x) |x - T(x)|^2 over the soup for the cell map.

    Takes a computed diagram; if it was built without cost integrals they
    are recomputed at the same weights.  sites is accepted for call-site
    symmetry and must match the diagram when given.
    """
    if sites is not None and sites is not diagram.sites:
        if not np.array_equal(sites.positions, diagram.sites.positions):
            raise ValidationError("sites do not match the diagram")
    if diagram.costs is None:
        diagram = compute_diagram(diagram.soup, diagram.sites, diagram.weights,
                                  want_cost=True)
    return TransportSummary(cost=float(diagram.costs.sum()),
                            cell_costs=diagram.costs.copy(),
                            cell_masses=diagram.masses.copy())


def _subtriangle_points(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric centroids and weights of the m^2 regular subtriangles.

    Splitting each edge into m parts tiles the triangle with m^2 congruent
    subtriangles (upward and downward copies); each contributes its centroid
    with weight 1/m^2.
    """
    bary = []
    for r in range(m):
        for c in range(m - r):
            # upward subtriangle with corners (c,r), (c+1,r), (c,r+1) in grid steps
            bary.append(((3 * c + 1) / (3 * m), (3 * r + 1) / (3 * m)))
            if c + r < m - 1:
                # downward neighbor with corners (c+1,r), (c+1,r+1), (c,r+1)
                bary.append(((3 * c + 2) / (3 * m), (3 * r + 2) / (3 * m)))
    ab = np.array(bary)
    w = np.full(len(bary), 1.0 / (m * m))
    return ab, w


def lp_oracle(soup: SimplexSoup, sites: SiteSet, nu=None,
              samples_per_triangle: int | None = None):
    """Exact discrete transport cost on a centroid discretization of the soup.

    Each triangle is tiled with m^2 congruent subtriangles, m^2 being
    samples_per_triangle rounded down to a square; every subtriangle becomes
    one point mass at its centroid weighted by the local density.  Sample
    masses are rescaled so both marginals match exactly, then the transport
    LP is solved to optimality.  Returns the optimal cost and the per-site
    received masses.

    Restricted to tiny instances: at most 10 sites and 5000 samples.
    """
    if sites.n > LP_MAX_SITES:
        raise ValidationError(
            f"lp_oracle is limited to {LP_MAX_SITES} sites, got {sites.n}")
    if nu is None:
        nu = sites.masses
    nu = as_weights(nu, sites.n)
    if samples_per_triangle is None:
        m = 1
        while (m + 1) ** 2 * soup.n_triangles <= LP_MAX_SAMPLES:
            m += 1
    else:
        m = max(1, math.isqrt(samples_per_triangle))
    n_samples = m * m * soup.n_triangles
    if n_samples > LP_MAX_SAMPLES:
        raise ValidationError(
            f"{n_samples} samples exceed the lp_oracle cap of {LP_MAX_SAMPLES}")

    ab, w = _subtriangle_points(m)
    tri = soup.tri_coords            # (T, 3, 3)
    rho = soup.tri_density           # (T, 3)
    a = ab[:, 0][None, :]            # (1, S)
    b = ab[:, 1][None, :]
    c = 1.0 - a - b
    # points[t, s] = a*v1 + b*v2 + c*v0 with bary (a, b) measured from v0
    pts = (c[..., None] * tri[:, None, 0]
           + a[..., None] * tri[:, None, 1]
           + b[..., None] * tri[:, None, 2])
    dens = c * rho[:, 0:1] + a * rho[:, 1:2] + b * rho[:, 2:3]
    masses = dens * (soup.areas[:, None] * w[None, :])
    pts = pts.reshape(-1, 3)
    masses = masses.reshape(-1)
    keep = masses > 0
    pts, masses = pts[keep], masses[keep]
    masses *= float(nu.sum()) / float(masses.sum())

    m, n = masses.size, sites.n
    d2 = ((pts[:, None, :] - sites.positions[None, :, :]) ** 2).sum(axis=2)
    cost_vec = d2.reshape(-1)
    # rows: one mass-conservation equality per sample, one per site
    rows_s = np.repeat(np.arange(m), n)
    rows_y = m + np.tile(np.arange(n), m)
    cols = np.arange(m * n)
    a_eq = sp.csr_matrix(
        (np.ones(2 * m * n),
         (np.concatenate([rows_s, rows_y]), np.concatenate([cols, cols]))),
        shape=(m + n, m * n))
    b_eq = np.concatenate([masses, nu])
    result = scipy.optimize.linprog(cost_vec, A_eq=a_eq, b_eq=b_eq,
                                    bounds=(0, None), method="highs")
    if not result.success:
        raise ValidationError(f"transport LP failed: {result.message}")
    plan = result.x.reshape(m, n)
    return float(result.fun), plan.sum(axis=0)
