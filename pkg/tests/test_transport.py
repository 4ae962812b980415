import numpy as np
import pytest

from sdot import (SiteSet, ValidationError, compute_diagram, damped_newton,
                  lp_oracle, sample_on_soup, transport_cost,
                  transport_map_eval)

from helpers import unit_square

TWO_SITES = SiteSet(np.array([[0.25, 0.5, 0.0], [0.75, 0.5, 0.0]]))


class TestMapEval:
    def test_site_is_its_own_image(self, rng):
        pos = rng.uniform(0.1, 0.9, size=(9, 3))
        sites = SiteSet(pos)
        got = transport_map_eval(pos, sites, np.zeros(9))
        assert np.array_equal(got, np.arange(9))

    def test_plane_split(self):
        psi = np.array([0.0, 0.1])   # boundary at x = 0.6
        assert transport_map_eval(np.array([0.59, 0.5, 0.0]), TWO_SITES, psi) == 0
        assert transport_map_eval(np.array([0.61, 0.5, 0.0]), TWO_SITES, psi) == 1

    def test_tie_goes_to_lowest_index(self):
        on_boundary = np.array([0.5, 0.5, 0.0])
        assert transport_map_eval(on_boundary, TWO_SITES, np.zeros(2)) == 0

    def test_batch_shape_and_scalar(self):
        psi = np.zeros(2)
        batch = transport_map_eval(np.array([[0.1, 0.5, 0.0], [0.9, 0.5, 0.0]]),
                                   TWO_SITES, psi)
        assert batch.tolist() == [0, 1]
        single = transport_map_eval(np.array([0.1, 0.5, 0.0]), TWO_SITES, psi)
        assert int(single) == 0

    def test_rejects_wrong_dimension(self):
        with pytest.raises(ValidationError):
            transport_map_eval(np.array([[0.1, 0.5]]), TWO_SITES, np.zeros(2))


class TestCost:
    def test_single_site_square(self, square):
        # integral of |x - center|^2 over [0,1]^2 is 1/6
        sites = SiteSet(np.array([[0.5, 0.5, 0.0]]))
        diagram = compute_diagram(square, sites, np.zeros(1))
        summary = transport_cost(diagram)
        assert summary.cost == pytest.approx(1.0 / 6.0, rel=1e-12)

    def test_cell_masses_match_diagram(self, square, rng):
        pos = sample_on_soup(square, 7, rng)
        sites = SiteSet(pos)
        psi = rng.normal(size=7) * 0.01
        diagram = compute_diagram(square, sites, psi)
        summary = transport_cost(diagram, sites)
        assert np.allclose(summary.cell_masses, diagram.masses, atol=1e-12)
        assert summary.cost == pytest.approx(float(summary.cell_costs.sum()),
                                             rel=1e-12)

    def test_cost_recomputed_when_absent(self, square):
        diagram = compute_diagram(square, TWO_SITES, np.zeros(2),
                                  want_cost=False)
        assert diagram.costs is None
        summary = transport_cost(diagram)
        assert summary.cost > 0.0

    def test_solved_map_is_near_lp_optimum(self, square):
        # the discretized LP lower-bounds the continuous optimum, which the
        # solved cell map attains
        sites = SiteSet(np.array([[0.25, 0.5, 0.0], [0.85, 0.5, 0.0]]),
                        np.array([0.7, 0.3]))
        psi, _ = damped_newton(square, sites)
        solved = transport_cost(compute_diagram(square, sites, psi))
        cost_lp, _ = lp_oracle(square, sites, samples_per_triangle=900)
        assert solved.cost == pytest.approx(cost_lp, rel=1e-2)


class TestLpOracle:
    def test_single_site_exact(self, square):
        sites = SiteSet(np.array([[0.5, 0.5, 0.0]]))
        cost, masses = lp_oracle(square, sites, samples_per_triangle=1600)
        assert cost == pytest.approx(1.0 / 6.0, rel=2e-3)
        assert masses[0] == pytest.approx(1.0, abs=1e-9)

    def test_matches_newton_solution(self, square):
        sites = SiteSet(TWO_SITES.positions.copy(), np.array([0.6, 0.4]))
        psi, _ = damped_newton(square, sites)
        solved = transport_cost(compute_diagram(square, sites, psi))
        cost, masses = lp_oracle(square, sites, samples_per_triangle=1600)
        assert cost == pytest.approx(solved.cost, rel=1e-2)
        assert np.allclose(masses, [0.6, 0.4], atol=1e-3)

    def test_respects_instance_limits(self, square, rng):
        pos = sample_on_soup(square, 11, rng)
        with pytest.raises(ValidationError):
            lp_oracle(square, SiteSet(pos))
        with pytest.raises(ValidationError):
            lp_oracle(square, TWO_SITES, samples_per_triangle=100000)
