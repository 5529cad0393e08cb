import math

import numpy as np
import pytest

from nxmf import (
    Grid1D,
    Law1D,
    c1,
    c2,
    gaussian_fibers,
    gen_uniform,
    independence_gap,
    linear_attraction,
    meanfield_gap,
    w1,
)
from nxmf.metrics import AgentLawSpec
from nxmf.weights import SparseWeights


def greedy_transport_oracle(xa, wa, xb, wb):
    """Northwest-corner transport on sorted supports; optimal for |x - y|
    in one dimension."""
    xa, wa = list(xa), list(wa)
    xb, wb = list(xb), list(wb)
    i = j = 0
    cost = 0.0
    while i < len(xa) and j < len(xb):
        m = min(wa[i], wb[j])
        cost += m * abs(xa[i] - xb[j])
        wa[i] -= m
        wb[j] -= m
        if wa[i] <= 1e-15:
            i += 1
        if j < len(xb) and wb[j] <= 1e-15:
            j += 1
    return cost


class TestW1:
    def test_unit_translation(self):
        assert w1(Law1D.from_atoms([0.0]), Law1D.from_atoms([1.0])) == 1.0

    def test_self_distance_zero(self, rng):
        a = Law1D.from_atoms(rng.standard_normal(9))
        assert w1(a, a) == 0.0

    def test_three_atoms_vs_transport_oracle(self, rng):
        for _ in range(50):
            xa = np.sort(rng.standard_normal(3))
            xb = np.sort(rng.standard_normal(3))
            wa = rng.random(3)
            wa /= wa.sum()
            wb = rng.random(3)
            wb /= wb.sum()
            got = w1(Law1D.from_atoms(xa, wa), Law1D.from_atoms(xb, wb))
            ref = greedy_transport_oracle(xa, wa, xb, wb)
            assert abs(got - ref) < 1e-12

    def test_symmetry_and_triangle(self, rng):
        for _ in range(1000):
            laws = [Law1D.from_atoms(rng.standard_normal(4)) for _ in range(3)]
            dab = w1(laws[0], laws[1])
            assert dab == w1(laws[1], laws[0])
            assert dab <= w1(laws[0], laws[2]) + w1(laws[2], laws[1]) + 1e-12

    def test_grid_vs_atomized(self, rng):
        g = Grid1D(-5, 5, 64)
        f = gaussian_fibers(g, [0.3], [0.7])
        grid_law = Law1D.from_grid(g, f.values[0])
        atom_law = Law1D.from_atoms(g.centers(), f.values[0] * g.dx)
        other = Law1D.from_atoms(rng.standard_normal(40))
        a = w1(grid_law, other)
        b = w1(atom_law, other)
        assert abs(a - b) <= g.dx

    def test_grid_vs_grid_translation(self):
        g = Grid1D(-8, 8, 256)
        f = gaussian_fibers(g, [0.0, 1.2], [0.5, 0.5])
        d = w1(Law1D.from_grid(g, f.values[0]), Law1D.from_grid(g, f.values[1]))
        assert abs(d - 1.2) < 2 * g.dx

    def test_unnormalized_rejected(self):
        with pytest.raises(ValueError, match="mass"):
            Law1D.from_atoms([0.0, 1.0], [0.6, 0.6])
        g = Grid1D(0, 1, 8)
        with pytest.raises(ValueError, match="mass"):
            Law1D.from_grid(g, np.full(8, 2.0))


class TestConstants:
    def test_c1_at_zero(self):
        assert c1(0.0, 1.0, 1.0) == 0.0

    def test_c2_at_zero(self):
        m = 3.7
        assert abs(c2(0.0, m, 1.0, 1.0) - math.sqrt(2) * m) < 1e-14

    def test_c1_closed_form(self):
        assert abs(c1(1.0, 1.0, 1.0) - math.sqrt(2.0) * (math.e**2 - 1.0)) < 1e-12

    def test_c1_row_sum_scaling(self):
        assert abs(c1(0.5, 2.0, 0.3) - math.sqrt(1.0) * (math.exp(2 * 2 * 0.5 * 0.3) - 1)) < 1e-14

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            c1(-1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            c2(1.0, -1.0, 1.0, 1.0)


class TestIndependenceGap:
    def test_replica_floor(self):
        w = gen_uniform(4, 1.0)
        laws = AgentLawSpec.spread(4, -1, 1, 0.5)
        with pytest.raises(ValueError, match="replicas"):
            independence_gap(w, linear_attraction(), laws, Grid1D(-6, 6, 64),
                             1.0, 0.05, 0, n_replicas=10)

    def test_time_zero_gap_within_tolerance(self):
        # identical initial laws at t = 0: the bound is 0 and the measured
        # gap is pure sampling + grid error, covered by the tolerance
        n = 8
        w = gen_uniform(n, 1.0)
        k = linear_attraction()
        grid = Grid1D(-6, 6, 96)
        laws = AgentLawSpec.spread(n, 0.0, 0.0, 0.6)
        rep = independence_gap(w, k, laws, grid, t_end=0.0, dt=0.05,
                               master_seed=5, n_replicas=400)
        assert rep.bound == 0.0
        assert rep.gap <= rep.tolerance

    def test_gap_shrinks_with_replicas(self):
        # uniform weights, identical laws: at t = 0 the estimate is pure
        # Monte Carlo noise, decaying like R^(-1/2) within a factor 3
        n = 8
        w = gen_uniform(n, 1.0)
        k = linear_attraction()
        grid = Grid1D(-6, 6, 512)
        laws = AgentLawSpec.spread(n, 0.0, 0.0, 0.6)
        gaps = []
        for reps in (200, 3200):
            r = independence_gap(w, k, laws, grid, t_end=0.0, dt=0.05,
                                 master_seed=9, n_replicas=reps, n_bootstrap=8)
            gaps.append(r.gap)
        expected = math.sqrt(3200 / 200)
        assert expected / 3 <= gaps[0] / gaps[1] <= expected * 3

    def test_bound_holds_small_run(self):
        from nxmf import gen_class_permutation

        n, m = 32, 8
        w = gen_class_permutation(n, m, [k % (n // m) + 1 for k in range(1, n // m + 1)])
        k = linear_attraction()
        grid = Grid1D(-8, 8, 256)
        laws = AgentLawSpec.spread(n, -2, 2, 0.6)
        rep = independence_gap(w, k, laws, grid, t_end=0.5, dt=0.05,
                               master_seed=13, n_replicas=300, n_bootstrap=16)
        assert rep.gap <= rep.bound + rep.tolerance


class TestMeanfieldGap:
    def test_single_agent_degenerate(self):
        # one agent sitting at its law's mean with a tight fiber: the gap
        # is quadrature width, order dx
        w = SparseWeights(1, [], [], [])
        k = linear_attraction()
        grid = Grid1D(-2, 2, 128)
        laws = AgentLawSpec.spread(1, 0.0, 0.0, 0.02)
        reps = meanfield_gap(w, k, laws, grid, [0.0], dt=0.05, master_seed=3, n_seeds=50)
        assert reps[0].gap <= 3 * grid.dx

    def test_time_zero_is_sampling_error(self):
        n = 16
        w = gen_uniform(n, 1.0)
        k = linear_attraction()
        grid = Grid1D(-7, 7, 256)
        laws = AgentLawSpec.spread(n, -1, 1, 0.5)
        reps = meanfield_gap(w, k, laws, grid, [0.0], dt=0.05, master_seed=21, n_seeds=50)
        # N = 16 samples of a unit-scale law: W1 sampling error ~ N^(-1/2)
        assert 0.02 <= reps[0].gap <= 1.0

    def test_gap_decreases_with_n(self):
        k = linear_attraction()
        grid = Grid1D(-7, 7, 256)
        gaps = []
        for n in (16, 64, 256):
            w = gen_uniform(n, 1.0)
            laws = AgentLawSpec.spread(n, -1, 1, 0.5)
            reps = meanfield_gap(w, k, laws, grid, [0.0, 0.3], dt=0.05,
                                 master_seed=17, n_seeds=30)
            gaps.append(max(r.gap for r in reps))
        assert gaps[0] > gaps[1] > gaps[2]


class TestAgentLawSpec:
    def test_spread_shapes(self):
        laws = AgentLawSpec.spread(5, -1, 1, 0.3)
        assert laws.n_agents == 5
        assert laws.means[0, 0] == -1 and laws.means[-1, 0] == 1

    def test_sampling_matches_moments(self, rng):
        laws = AgentLawSpec.spread(4, 2.0, 2.0, 0.5)
        draws = np.stack([laws.sample(rng)[:, 0] for _ in range(4000)])
        assert abs(draws.mean() - 2.0) < 0.05
        assert abs(draws.std() - 0.5) < 0.05

    def test_mixture_sampling(self, rng):
        laws = AgentLawSpec(
            means=np.array([[-2.0, 2.0]]),
            stds=np.array([[0.1, 0.1]]),
            weights=np.array([[0.5, 0.5]]),
        )
        draws = np.array([laws.sample(rng)[0, 0] for _ in range(2000)])
        frac_left = (draws < 0).mean()
        assert 0.4 < frac_left < 0.6
        fib = laws.fibers(Grid1D(-4, 4, 128))
        assert abs(fib.masses()[0] - 1.0) < 1e-12
