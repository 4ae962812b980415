"""Damped Newton solver for prescribed cell masses.

Given a soup measure and target masses nu at the sites, find weights psi so
that every power cell restricted to the soup carries its target mass.  The
iteration is a globalized Newton method on the cell-mass map: each step
solves the (singular, zero-row-sum) Jacobian system on the zero-mean
subspace and halves the step until both guards hold, namely no cell mass
falls below the floor eps0 and the residual contracts by at least the factor
tied to the step length.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (DegenerateConfigurationError, InitializationError,
                     LineSearchError, NonConvergenceError,
                     SingularSystemError, ValidationError)
from .laguerre import (RestrictedLaguerreDiagram, _scale_of, compute_diagram,
                       interface_jacobian_entries)
from .measures import (SimplexSoup, SiteSet, as_weights,
                       check_strong_connectedness, distance_to_soup)

log = logging.getLogger(__name__)

MASS_FLOOR_REL = 1e-12       # empty-cell threshold, relative to total mass
INIT_STEP_REL = 1e-6         # initialization push, times scale squared
JITTER_REL = 1e-6            # site jitter amplitude, times scale
MAX_JITTER_ROUNDS = 3


@dataclass
class SolverConfig:
    """Tunable limits of the damped Newton iteration."""

    eta: float = 1e-6                      # residual target, euclidean norm
    max_iterations: int = 100
    max_line_search_exponent: int = 40     # smallest step is 2^-40 times v
    linear_tol: float = 1e-10              # relative residual of the CG solve
    jitter_policy: str = "on-degeneracy"   # or "off"
    epsilon0_rule: str = "half-min"        # or "min": no 1/2 safety factor
    seed: int = 0

    def __post_init__(self):
        if self.jitter_policy not in ("on-degeneracy", "off"):
            raise ValidationError(f"unknown jitter policy {self.jitter_policy!r}")
        if self.epsilon0_rule not in ("half-min", "min"):
            raise ValidationError(f"unknown epsilon0 rule {self.epsilon0_rule!r}")
        if self.eta <= 0:
            raise ValidationError("eta must be positive")


@dataclass
class SolveReport:
    """Progress record of one damped Newton run."""

    converged: bool
    iterations: int
    residuals: list[float]               # |G(psi_k) - nu|, k = 0..iterations
    line_search_exponents: list[int]     # accepted halving exponent per step
    epsilon0: float
    eta: float
    wall_time: float
    min_masses: list[float] = field(default_factory=list)  # min_i G_i per iterate
    warnings: list[str] = field(default_factory=list)
    jitter_rounds: int = 0
    sites: SiteSet | None = None         # sites actually solved (after jitter)

    @property
    def worst_decrease(self) -> float:
        r = self.residuals
        if len(r) < 2:
            return 0.0
        return max(r[k + 1] / r[k] for k in range(len(r) - 1) if r[k] > 0)

    def to_json_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residuals": [float(x) for x in self.residuals],
            "line_search_exponents": [int(e) for e in self.line_search_exponents],
            "min_masses": [float(x) for x in self.min_masses],
            "epsilon0": float(self.epsilon0),
            "eta": float(self.eta),
            "worst_decrease": float(self.worst_decrease),
            "jitter_rounds": int(self.jitter_rounds),
            "warnings": list(self.warnings),
            "wall_time_s": float(self.wall_time),
        }


@dataclass(eq=False)
class SparseJacobian:
    """Symmetric Jacobian of the cell-mass map with zero row sums.

    Off-diagonal entries are stored once (rows < cols); the diagonal is the
    negated row sum, so the matrix annihilates constants.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    diagonal: np.ndarray

    def to_csr(self) -> sp.csr_matrix:
        i = np.concatenate([self.rows, self.cols, np.arange(self.n)])
        j = np.concatenate([self.cols, self.rows, np.arange(self.n)])
        v = np.concatenate([self.values, self.values, self.diagonal])
        return sp.csr_matrix((v, (i, j)), shape=(self.n, self.n))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_csr() @ x


@dataclass
class SolutionCertificate:
    """Recomputed-from-scratch checks of a weight vector."""

    ok: bool
    residual: float
    eta: float
    min_mass: float
    epsilon0: float
    weight_spread: float
    spread_bound: float
    messages: list[str]

    def to_json_dict(self) -> dict:
        return {
            "ok": self.ok,
            "residual": float(self.residual),
            "eta": float(self.eta),
            "min_mass": float(self.min_mass),
            "epsilon0": float(self.epsilon0),
            "weight_spread": float(self.weight_spread),
            "spread_bound": float(self.spread_bound),
            "messages": list(self.messages),
        }


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def evaluate_G(soup: SimplexSoup, sites: SiteSet, psi):
    """Cell masses at the given weights, with the diagram they came from."""
    diagram = compute_diagram(soup, sites, psi, want_cost=False)
    return diagram.masses.copy(), diagram


def _init_state(soup: SimplexSoup, sites: SiteSet):
    """Starting weights with every cell mass above the floor.

    psi0_i = -d(y_i, soup)^2 makes the point of the soup closest to y_i win
    against every rival there, so no cell starts empty; ties (several sites
    sharing one nearest point, e.g. a corner) are broken by lowering the
    offending weights.  The tie-breaking step is staggered per site and
    shrinks geometrically per round: equal steps can leapfrog two rivals
    over a thin contested wedge forever, while shrinking staggered steps
    must eventually drop a bisector inside it.
    """
    d = np.asarray(distance_to_soup(sites.positions, soup))
    psi = -(d * d)
    floor = MASS_FLOOR_REL * soup.total_mass
    step = INIT_STEP_REL * _scale_of(soup, sites) ** 2
    stagger = 1.0 + np.arange(sites.n) / (2.0 * sites.n)
    bad = np.zeros(sites.n, dtype=bool)
    for round_ in range(11):
        G, diagram = evaluate_G(soup, sites, psi)
        bad = G <= floor
        if not bad.any():
            return psi, G, diagram
        if round_ < 10:
            psi[bad] -= step * 0.5 ** round_ * stagger[bad]
    raise InitializationError(np.flatnonzero(bad).tolist())


def init_weights(soup: SimplexSoup, sites: SiteSet) -> np.ndarray:
    """Starting weights for the Newton iteration (all cells nonempty)."""
    return _init_state(soup, sites)[0]


def assemble_jacobian(diagram: RestrictedLaguerreDiagram,
                      sites: SiteSet | None = None) -> SparseJacobian:
    """Jacobian of the cell-mass map at the diagram's weights.

    sites is accepted for call-site symmetry but the diagram already knows
    its sites; when given it must be the same set.
    """
    if sites is not None and sites is not diagram.sites:
        if sites.n != diagram.sites.n or not np.array_equal(
                sites.positions, diagram.sites.positions):
            raise ValidationError("sites do not match the diagram")
    entries = interface_jacobian_entries(diagram)
    n = diagram.sites.n
    m = len(entries)
    rows = np.empty(m, dtype=np.int64)
    cols = np.empty(m, dtype=np.int64)
    values = np.empty(m)
    diagonal = np.zeros(n)
    for k, (i, j, v) in enumerate(entries):
        rows[k] = i
        cols[k] = j
        values[k] = v
        diagonal[i] -= v
        diagonal[j] -= v
    return SparseJacobian(n=n, rows=rows, cols=cols, values=values,
                          diagonal=diagonal)


def solve_newton_system(jacobian: SparseJacobian, rhs,
                        tol: float = 1e-10) -> np.ndarray:
    """Solve H v = rhs on the zero-mean subspace.

    H is symmetric negative semidefinite with zero row sums, so -H is
    positive semidefinite and definite on zero-mean vectors whenever the
    interface graph is connected.  Diagonally preconditioned conjugate
    gradients with the iterate and residual projected back onto the subspace
    after every update; vanishing curvature or stagnation past 10 n
    iterations raises SingularSystemError.
    """
    n = jacobian.n
    r = as_weights(rhs, n)
    b = -(r - r.mean())
    bn = float(np.linalg.norm(b))
    if bn == 0.0 or n == 1:
        return np.zeros(n)
    a = -jacobian.to_csr()
    d = -jacobian.diagonal
    dmax = float(d.max())
    if dmax <= 0.0:
        raise SingularSystemError(
            "cell-mass Jacobian vanishes: no interfaces carry density "
            "(disconnected support or empty interfaces)")
    precond = 1.0 / np.maximum(d, 1e-14 * dmax)

    x = np.zeros(n)
    res = b.copy()
    z = precond * res
    z -= z.mean()
    p = z.copy()
    rz = float(res @ z)
    for _ in range(10 * n):
        ap = a @ p
        pap = float(p @ ap)
        if not np.isfinite(pap) or pap <= 0.0:
            raise SingularSystemError(
                "curvature vanished in the Newton system; the transport "
                "problem is singular at these weights")
        alpha = rz / pap
        x += alpha * p
        res -= alpha * ap
        x -= x.mean()
        res -= res.mean()
        if float(np.linalg.norm(res)) <= tol * bn:
            return x
        z = precond * res
        z -= z.mean()
        rz_new = float(res @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    raise SingularSystemError(
        f"conjugate gradients stagnated after {10 * n} iterations "
        f"(relative residual {float(np.linalg.norm(res)) / bn:.2e})")


def _check_targets(soup: SimplexSoup, sites: SiteSet, nu) -> np.ndarray:
    nu = as_weights(nu, sites.n)
    if np.any(nu <= 0):
        bad = np.flatnonzero(nu <= 0)
        raise ValidationError(f"target masses must be positive (sites {bad[:8].tolist()})")
    mu = soup.total_mass
    if abs(float(nu.sum()) - mu) > 1e-9 * max(1.0, mu):
        raise ValidationError(
            f"target masses sum to {float(nu.sum()):.17g} but the soup "
            f"carries {mu:.17g}")
    return nu


def damped_newton(soup: SimplexSoup, sites: SiteSet, nu=None,
                  config: SolverConfig | None = None):
    """Weights solving the prescribed-mass problem, with a progress report.

    nu defaults to the site masses.  On a degenerate configuration the sites
    are jittered (seeded, a few parts in 1e6 of the scene scale) and the
    solve restarts, up to three times; the report's sites field holds the
    positions actually used.
    """
    config = config or SolverConfig()
    if nu is None:
        nu = sites.masses
    nu = _check_targets(soup, sites, nu)

    warnings: list[str] = []
    conn = check_strong_connectedness(soup)
    if not conn.connected:
        msg = (f"soup adjacency graph splits into {conn.n_components} "
               f"components; the transport system may be singular")
        warnings.append(msg)
        log.warning(msg)

    rng = np.random.default_rng(config.seed)
    scale = _scale_of(soup, sites)
    current = sites
    for attempt in range(MAX_JITTER_ROUNDS + 1):
        try:
            return _solve(soup, current, nu, config, warnings, attempt)
        except DegenerateConfigurationError as exc:
            if config.jitter_policy != "on-degeneracy" or attempt == MAX_JITTER_ROUNDS:
                raise
            amp = JITTER_REL * scale
            moved = current.positions + rng.uniform(-amp, amp,
                                                    size=current.positions.shape)
            current = SiteSet(moved, current.masses.copy())
            msg = f"jittered sites by {amp:.3g} after degeneracy ({exc})"
            warnings.append(msg)
            log.warning(msg)
    raise AssertionError("unreachable")


def _solve(soup, sites, nu, config, base_warnings, jitter_rounds):
    t0 = time.perf_counter()
    warnings = list(base_warnings)
    psi, G, diagram = _init_state(soup, sites)
    mmin = min(float(G.min()), float(nu.min()))
    eps0 = 0.5 * mmin if config.epsilon0_rule == "half-min" else mmin
    res = float(np.linalg.norm(G - nu))
    residuals = [res]
    exponents: list[int] = []
    min_masses = [float(G.min())]

    def report(converged: bool) -> SolveReport:
        return SolveReport(converged=converged, iterations=len(exponents),
                           residuals=residuals,
                           line_search_exponents=exponents,
                           epsilon0=eps0, eta=config.eta,
                           wall_time=time.perf_counter() - t0,
                           min_masses=min_masses,
                           warnings=warnings, jitter_rounds=jitter_rounds,
                           sites=sites)

    while res >= config.eta:
        if len(exponents) >= config.max_iterations:
            exc = NonConvergenceError(
                f"residual {res:.3e} after {config.max_iterations} iterations "
                f"(target {config.eta:.3e})")
            exc.report = report(False)
            raise exc
        jac = assemble_jacobian(diagram)
        try:
            v = solve_newton_system(jac, -(G - nu), tol=config.linear_tol)
        except SingularSystemError as exc:
            exc.report = report(False)
            if warnings:
                exc.args = (f"{exc.args[0]} [{'; '.join(warnings)}]",)
            raise
        accepted = False
        for ell in range(config.max_line_search_exponent + 1):
            trial = psi + v * (0.5 ** ell)
            try:
                G_t, diagram_t = evaluate_G(soup, sites, trial)
            except DegenerateConfigurationError:
                continue
            res_t = float(np.linalg.norm(G_t - nu))
            if float(G_t.min()) >= eps0 and res_t <= (1.0 - 0.5 ** (ell + 1)) * res:
                accepted = True
                break
        if not accepted:
            hints = list(warnings)
            tightest = min(diagram.records, key=lambda r: r.projected_gap,
                           default=None)
            if tightest is not None:
                hints.append(f"nearest degenerate pair ({tightest.site_i}, "
                             f"{tightest.site_j}) with in-plane site gap "
                             f"{tightest.projected_gap:.3e}")
            exc = LineSearchError(
                f"no acceptable step within 2^-{config.max_line_search_exponent} "
                f"at residual {res:.3e} (mass floor {eps0:.3e})"
                + (f" [{'; '.join(hints)}]" if hints else ""))
            exc.report = report(False)
            raise exc
        psi, G, diagram, res = trial, G_t, diagram_t, res_t
        residuals.append(res)
        exponents.append(ell)
        min_masses.append(float(G.min()))
        log.info("newton iteration %d: residual %.6e, step 2^-%d",
                 len(exponents), res, ell)

    return psi, report(True)


def _exact_diameter(points: np.ndarray) -> float:
    m = points.shape[0]
    best = 0.0
    chunk = max(1, int(2e6) // max(m, 1))
    for beg in range(0, m, chunk):
        d = np.linalg.norm(points[beg:beg + chunk, None, :] - points[None, :, :],
                           axis=2)
        best = max(best, float(d.max()))
    return best


def verify_solution(soup: SimplexSoup, sites: SiteSet, nu, psi,
                    config: SolverConfig | None = None) -> SolutionCertificate:
    """Recompute everything from scratch and certify a weight vector.

    Checks the residual against eta, every cell mass against the eps0 floor
    of a fresh initialization, and the weight spread against the squared
    diameter of the scene (soup vertices and sites together).
    """
    config = config or SolverConfig()
    nu = _check_targets(soup, sites, nu)
    psi = as_weights(psi, sites.n)
    G, _ = evaluate_G(soup, sites, psi)
    residual = float(np.linalg.norm(G - nu))
    psi0, G0, _ = _init_state(soup, sites)
    mmin = min(float(G0.min()), float(nu.min()))
    eps0 = 0.5 * mmin if config.epsilon0_rule == "half-min" else mmin
    min_mass = float(G.min())
    spread = float(psi.max() - psi.min())
    diam = _exact_diameter(np.vstack([soup.vertices, sites.positions]))
    bound = diam * diam
    messages = []
    if residual >= config.eta:
        messages.append(f"residual {residual:.3e} >= eta {config.eta:.3e}")
    if min_mass < eps0:
        messages.append(f"min cell mass {min_mass:.3e} < eps0 {eps0:.3e}")
    if spread > bound:
        messages.append(f"weight spread {spread:.3e} > squared diameter {bound:.3e}")
    return SolutionCertificate(ok=not messages, residual=residual,
                               eta=config.eta, min_mass=min_mass,
                               epsilon0=eps0, weight_spread=spread,
                               spread_bound=bound, messages=messages)
