"""Applications built on the prescribed-mass solver.

quantize  Lloyd iteration in transport geometry: solve for the weights,
          move every site to the mass centroid of its cell, repeat.  The
          transport cost is non-increasing along the iteration.
remesh    Dual triangulation of the diagram seeded at the soup vertices:
          sites meeting three at a time at a cell corner span a dual face.
register  Rigid alignment of a point set to a soup by alternating the
          transport solve with a weighted orthogonal Procrustes fit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.spatial
from scipy.spatial.transform import Rotation

from .errors import RegistrationError, SolverError, ValidationError
from .laguerre import _scale_of, cell_centroids, compute_diagram
from .measures import SimplexSoup, SiteSet, sample_on_soup
from .solver import SolveReport, SolverConfig, damped_newton

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

@dataclass
class QuantizeResult:
    sites: SiteSet
    psi: np.ndarray
    cost_history: list[float]      # transport cost after each solve
    iterations: int                # position updates actually applied
    converged: bool
    reports: list[SolveReport] = field(default_factory=list)


def quantize(soup: SimplexSoup, n_sites: int, iterations: int = 10,
             seed: int = 0, config: SolverConfig | None = None,
             move_tol_rel: float = 1e-8) -> QuantizeResult:
    """Distribute n_sites points over the soup with equal transport mass.

    Starts from the deduplicated soup vertices when n_sites matches their
    count, otherwise from a seeded area-weighted sample.  Each round solves
    the prescribed-mass problem for uniform targets and moves every site to
    the density centroid of its cell; stops when the largest move falls
    below move_tol_rel times the scene scale.
    """
    if n_sites < 1:
        raise ValidationError("n_sites must be at least 1")
    config = config or SolverConfig()
    rng = np.random.default_rng(seed)
    unique = _dedup_vertices(soup)
    if n_sites == unique.shape[0]:
        positions = unique.copy()
    else:
        positions = sample_on_soup(soup, n_sites, rng)
    nu = np.full(n_sites, soup.total_mass / n_sites)

    scale = _scale_of(soup, SiteSet(positions, nu))
    cost_history: list[float] = []
    reports: list[SolveReport] = []
    psi = np.zeros(n_sites)
    converged = False
    it = 0
    for it in range(1, iterations + 1):
        sites = SiteSet(positions, nu)
        try:
            psi, rep = damped_newton(soup, sites, nu, config)
        except SolverError as exc:
            exc.args = (f"quantize iteration {it}: {exc.args[0]}",) + exc.args[1:]
            raise
        reports.append(rep)
        diagram = compute_diagram(soup, rep.sites, psi, want_cost=True)
        cost_history.append(float(diagram.costs.sum()))
        centroids = cell_centroids(diagram)
        move = float(np.linalg.norm(centroids - rep.sites.positions, axis=1).max())
        log.info("quantize round %d: cost %.6e, max move %.3e", it,
                 cost_history[-1], move)
        if move < move_tol_rel * scale:
            # a vanishing move means the previous round already landed on
            # the fixed point; it is not an update round
            converged = True
            it -= 1
            break
        positions = centroids
    return QuantizeResult(sites=SiteSet(positions, nu), psi=psi,
                          cost_history=cost_history, iterations=it,
                          converged=converged, reports=reports)


def _dedup_vertices(soup: SimplexSoup) -> np.ndarray:
    """Soup vertices with exact duplicates removed, first occurrence kept."""
    _, idx = np.unique(soup.vertices, axis=0, return_index=True)
    return soup.vertices[np.sort(idx)]


# ---------------------------------------------------------------------------
# remeshing
# ---------------------------------------------------------------------------

@dataclass
class DualMesh:
    """Triangulation dual to a restricted power diagram.

    One vertex per cell, placed at the cell's density centroid; one face per
    diagram corner where exactly three cells meet inside a triangle.
    face_points keeps that corner's position for each face (provenance).
    """

    vertices: np.ndarray          # (n, 3), cell centroids
    faces: np.ndarray             # (m, 3) cell indices, oriented
    face_points: np.ndarray       # (m, 3) diagram corner behind each face
    skipped_clusters: int = 0     # corners where four or more cells met

    def euler_characteristic(self) -> int:
        used = np.unique(self.faces)
        edges = set()
        for a, b, c in self.faces:
            edges.add((min(a, b), max(a, b)))
            edges.add((min(b, c), max(b, c)))
            edges.add((min(a, c), max(a, c)))
        return int(used.size) - len(edges) + int(self.faces.shape[0])


@dataclass
class RemeshResult:
    mesh: DualMesh
    sites: SiteSet
    psi: np.ndarray
    report: SolveReport


def remesh(soup: SimplexSoup, config: SolverConfig | None = None) -> RemeshResult:
    """Rebuild a triangulation of the soup from the diagram at its vertices.

    Sites are the deduplicated soup vertices with uniform targets.  After
    the solve, every cell corner where exactly three cells meet contributes
    the dual face joining their sites; corners shared by four or more cells
    are skipped with a warning.  A face is emitted only when all three
    pairwise interfaces carry positive density integral, and is oriented to
    match the normal of the triangle the corner lies on.
    """
    config = config or SolverConfig()
    positions = _dedup_vertices(soup)
    n = positions.shape[0]
    nu = np.full(n, soup.total_mass / n)
    sites = SiteSet(positions, nu)
    psi, rep = damped_newton(soup, sites, nu, config)
    diagram = compute_diagram(soup, rep.sites, psi, want_cost=False,
                              want_geometry=True)

    pair_mass = diagram.pair_integrals()
    corners = []          # (position, frozenset of sites, parent triangle)
    for tri_idx, row in enumerate(diagram.cells):
        for i, poly in row:
            tags = poly.edge_tags
            m = len(poly)
            for k in range(m):
                arriving = tags[(k - 1) % m]
                departing = tags[k]
                if arriving < 0 or departing < 0 or arriving == departing:
                    continue
                trip = frozenset((i, int(arriving), int(departing)))
                corners.append((poly.vertices[k], trip, tri_idx))
    centroids = cell_centroids(diagram)
    mesh = _dual_from_corners(centroids, corners, pair_mass, soup)
    return RemeshResult(mesh=mesh, sites=rep.sites, psi=psi, report=rep)


def _dual_from_corners(positions, corners, pair_mass, soup) -> DualMesh:
    if not corners:
        return DualMesh(vertices=positions.copy(),
                        faces=np.zeros((0, 3), dtype=np.int64),
                        face_points=np.zeros((0, 3)))
    pts = np.array([c[0] for c in corners])
    radius = 1e-7 * soup.bbox_diag
    tree = scipy.spatial.cKDTree(pts)
    # union-find over near-coincident corners
    parent = list(range(len(corners)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in tree.query_pairs(radius):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    clusters: dict[int, list[int]] = {}
    for k in range(len(corners)):
        clusters.setdefault(find(k), []).append(k)

    faces = {}
    skipped = 0
    for members in clusters.values():
        involved = frozenset().union(*(corners[k][1] for k in members))
        if len(involved) > 3:
            skipped += 1
            continue
        trip = tuple(sorted(involved))
        if trip in faces:
            continue
        i, j, k = trip
        if (pair_mass.get((i, j), 0.0) <= 0.0
                or pair_mass.get((i, k), 0.0) <= 0.0
                or pair_mass.get((j, k), 0.0) <= 0.0):
            continue
        tri_idx = corners[members[0]][2]
        normal = soup.normals[tri_idx]
        face_n = np.cross(positions[j] - positions[i], positions[k] - positions[i])
        if float(face_n @ normal) < 0.0:
            i, j, k = i, k, j
        faces[trip] = ((i, j, k), corners[members[0]][0])
    if skipped:
        log.warning("remesh skipped %d cell corners where four or more cells "
                    "meet; the dual mesh may have holes there", skipped)
    if faces:
        ordered = [faces[key] for key in sorted(faces)]
        faces_arr = np.array([f for f, _ in ordered], dtype=np.int64)
        points_arr = np.array([p for _, p in ordered])
    else:
        faces_arr = np.zeros((0, 3), dtype=np.int64)
        points_arr = np.zeros((0, 3))
    return DualMesh(vertices=positions.copy(), faces=faces_arr,
                    face_points=points_arr, skipped_clusters=skipped)


# ---------------------------------------------------------------------------
# rigid registration
# ---------------------------------------------------------------------------

@dataclass
class RigidTransform:
    """Proper rigid motion x -> R x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis, angle: float,
                        translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        rot = Rotation.from_rotvec(axis * angle).as_matrix()
        return cls(rot, np.asarray(translation, dtype=np.float64))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying inner first, then self."""
        return RigidTransform(self.rotation @ inner.rotation,
                              self.rotation @ inner.translation + self.translation)

    @property
    def angle(self) -> float:
        c = (float(np.trace(self.rotation)) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))


@dataclass
class RegisterResult:
    transform: RigidTransform      # maps the input positions to the aligned ones
    positions: np.ndarray          # aligned site positions
    iterations: int
    converged: bool
    rms_history: list[float]       # RMS point-to-centroid distance per round
    step_sizes: list[float]        # angle + relative translation per round
    reports: list[SolveReport] = field(default_factory=list)


def _procrustes(source: np.ndarray, target: np.ndarray,
                weights: np.ndarray) -> RigidTransform:
    """Weighted least-squares proper rigid motion taking source onto target."""
    w = weights / weights.sum()
    sc = w @ source
    tc = w @ target
    x = source - sc
    y = target - tc
    cov = x.T @ (y * w[:, None])
    u, s, vt = np.linalg.svd(cov)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise RegistrationError(
            "cross-covariance is rank deficient; the correspondence does not "
            "determine a rotation")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        raise RegistrationError("degenerate cross-covariance determinant")
    flip = np.diag([1.0, 1.0, d])
    rot = vt.T @ flip @ u.T
    return RigidTransform(rot, tc - rot @ sc)


def register(soup: SimplexSoup, sites: SiteSet, max_outer: int = 10,
             tol: float = 1e-6, config: SolverConfig | None = None) -> RegisterResult:
    """Rigidly align a weighted point set to a soup by transport matching.

    Each round solves the prescribed-mass problem from the soup to the
    current positions, reads off the cell centroids as correspondences, and
    applies the best proper rigid motion onto them.  Stops when the rotation
    angle plus the relative translation of a round falls below tol.
    """
    config = config or SolverConfig()
    nu = sites.masses * (soup.total_mass / float(sites.masses.sum()))
    positions = sites.positions.copy()
    scale = _scale_of(soup, sites)
    w = nu / nu.sum()
    total = RigidTransform.identity()
    steps: list[float] = []
    rms_history: list[float] = []
    reports: list[SolveReport] = []
    converged = False
    it = 0
    for it in range(1, max_outer + 1):
        current = SiteSet(positions, nu)
        psi, rep = damped_newton(soup, current, nu, config)
        reports.append(rep)
        diagram = compute_diagram(soup, rep.sites, psi, want_cost=False)
        targets = cell_centroids(diagram)
        gaps = ((rep.sites.positions - targets) ** 2).sum(axis=1)
        rms_history.append(float(np.sqrt(w @ gaps)))
        step = _procrustes(rep.sites.positions, targets, nu)
        positions = step.apply(positions)
        total = step.compose(total)
        # rigid step magnitude: rotation angle plus scale-relative translation
        size = step.angle + float(np.linalg.norm(step.translation)) / scale
        steps.append(size)
        log.info("register round %d: correspondence rms %.3e, step %.3e",
                 it, rms_history[-1], size)
        if size < tol:
            converged = True
            break
    return RegisterResult(transform=total, positions=positions, iterations=it,
                          converged=converged, rms_history=rms_history,
                          step_sizes=steps, reports=reports)
