import math

import numpy as np
import pytest

from nxmf import (
    FiberedDensity,
    Grid1D,
    LabeledTree,
    SparseWeights,
    T1,
    enumerate_trees,
    eval_transform,
    gaussian_fibers,
    gen_class_permutation,
    gen_uniform,
    hierarchy,
    hierarchy_norm,
    hierarchy_residual,
    kuramoto,
    linear_attraction,
    marginal,
    solve,
    tau,
    tau_at,
    tau_density,
    tree_to_transform,
)
from nxmf.observables import (
    LEAF,
    LatticeBudgetError,
    lambda_admissible,
    marginal_equation_residual,
    star,
    tau_dense_reference,
    tau_via_transform,
    tensor,
    transform_slots,
)
from nxmf import check_scaling
from conftest import random_fibers, random_sparse_weights

T2 = LabeledTree((0, 1))
T31 = LabeledTree((0, 1, 1))
T32 = LabeledTree((0, 1, 2))


class TestTransformConstruction:
    def test_single_vertex(self):
        assert tree_to_transform(T1) == LEAF

    def test_two_vertices(self):
        expr = tree_to_transform(T2)
        assert expr == tensor(LEAF, star(LEAF))
        assert expr.rank == 2
        assert expr.star_count() == 1

    def test_order_three_distinct(self):
        a = tree_to_transform(T31)
        b = tree_to_transform(T32)
        assert a != b
        assert a.star_count() == b.star_count() == 2
        assert a.rank == b.rank == 3

    def test_star_count_is_edge_count(self):
        for n in range(1, 5):
            for t in enumerate_trees(n):
                assert tree_to_transform(t).star_count() == len(t.edges())

    def test_slots_cover_vertices(self):
        for t in enumerate_trees(4):
            assert sorted(transform_slots(t)) == [1, 2, 3, 4]

    def test_order_cap(self):
        with pytest.raises(ValueError):
            tree_to_transform(LabeledTree((0, 1, 1, 1, 1)))


class TestEvalTransform:
    def setup_method(self):
        self.grid = Grid1D(-2, 2, 16)
        rng = np.random.default_rng(3)
        self.f = FiberedDensity(grid=self.grid, values=rng.random((6, 16)))

    def test_leaf_is_column(self):
        out = eval_transform(LEAF, gen_uniform(6, 1.0), self.f, [5])
        assert np.array_equal(out, self.f.values[:, 5])

    def test_star_row_stochastic_identical_fibers(self):
        f = FiberedDensity(grid=self.grid, values=np.tile(self.f.values[0], (6, 1)))
        w = gen_uniform(6, 1.0, include_diagonal=True)  # rows sum to 1
        a = eval_transform(star(LEAF), w, f, [3])
        b = eval_transform(LEAF, w, f, [3])
        assert np.allclose(a, b)

    def test_tensor_is_product(self):
        w = gen_uniform(6, 0.5)
        a = eval_transform(tensor(LEAF, LEAF), w, self.f, [2, 9])
        assert np.allclose(a, self.f.values[:, 2] * self.f.values[:, 9])

    def test_rank_mismatch(self):
        with pytest.raises(ValueError):
            eval_transform(tensor(LEAF, LEAF), gen_uniform(6, 1.0), self.f, [1])


class TestTau:
    def test_order_one_is_marginal(self, rng):
        g = Grid1D(-4, 4, 32)
        f = random_fibers(rng, g, 7)
        w = random_sparse_weights(rng, 7)
        ob = tau(T1, w, f)
        assert np.allclose(ob.values, marginal(f))

    def test_matches_dense_reference(self, rng):
        g = Grid1D(-3, 3, 12)
        for _ in range(5):
            n = int(rng.integers(2, 7))
            w = random_sparse_weights(rng, n, density=0.5)
            f = random_fibers(rng, g, n)
            for order in (1, 2, 3):
                for t in enumerate_trees(order):
                    a = tau(t, w, f).values
                    b = tau_dense_reference(t, w, f).values
                    assert np.abs(a - b).max() <= 1e-12

    def test_matches_transform_route(self, rng):
        g = Grid1D(-3, 3, 8)
        n = 5
        w = random_sparse_weights(rng, n, density=0.5)
        f = random_fibers(rng, g, n)
        for t in (T2, T31, T32):
            a = tau(t, w, f).values
            b = tau_via_transform(t, w, f).values
            assert np.abs(a - b).max() <= 1e-12

    def test_transform_association_immaterial(self, rng):
        # child-order permutations give different ASTs, identical values
        g = Grid1D(-3, 3, 8)
        n = 5
        w = random_sparse_weights(rng, n, density=0.5)
        f = random_fibers(rng, g, n)
        for t in enumerate_trees(4)[:4]:
            a = tau_via_transform(t, w, f, child_order="ascending").values
            b = tau_via_transform(t, w, f, child_order="descending").values
            assert np.abs(a - b).max() <= 1e-12

    def test_unreferenced_fiber_zero(self):
        g = Grid1D(-2, 2, 16)
        vals = np.zeros((2, 16))
        vals[1] = 0.25  # fiber 1 is identically zero
        f = FiberedDensity(grid=g, values=vals)
        w = SparseWeights.from_entries(2, [(1, 1, 1.0)])  # selects fiber 0 only
        for t in (T2, T31):
            assert np.abs(tau(t, w, f).values).max() == 0.0

    def test_budget_error_suggests_points(self):
        g = Grid1D(-2, 2, 64)
        f = FiberedDensity(grid=g, values=np.full((4, 64), 0.25 / 4))
        w = gen_uniform(4, 1.0)
        with pytest.raises(LatticeBudgetError, match="tau_at"):
            tau(LabeledTree((0, 1, 1, 1)), w, f, budget=1000)

    def test_tau_at_matches_lattice(self, rng):
        g = Grid1D(-3, 3, 10)
        n = 4
        w = random_sparse_weights(rng, n, density=0.6)
        f = random_fibers(rng, g, n)
        pts = rng.integers(0, 10, size=(20, 3))
        ob = tau(T32, w, f)
        sampled = tau_at(T32, w, f, pts)
        direct = ob.values[pts[:, 0], pts[:, 1], pts[:, 2]]
        assert np.abs(sampled - direct).max() <= 1e-13

    def test_sup_bound(self, rng):
        # |tau|_inf <= max_row_abs_sum^(m-1) * (max fiber sup)^m
        g = Grid1D(-3, 3, 10)
        for _ in range(10):
            n = int(rng.integers(2, 6))
            w = random_sparse_weights(rng, n, density=0.5)
            f = random_fibers(rng, g, n)
            rep = check_scaling(w)
            fsup = f.values.max()
            for t in (T1, T2, T31, T32):
                m = t.order
                bound = rep.max_row_abs_sum ** (m - 1) * fsup**m
                assert tau(t, w, f).sup_norm() <= bound + 1e-12


class TestTauDensity:
    def test_single_vertex_is_one(self, rng):
        for _ in range(5):
            w = random_sparse_weights(rng, int(rng.integers(2, 20)))
            assert tau_density(T1, w) == 1.0

    def test_uniform_with_diagonal(self):
        w = gen_uniform(6, 0.7, include_diagonal=True)
        for n in range(1, 6):
            for t in enumerate_trees(n):
                assert abs(tau_density(t, w) - 0.7 ** (n - 1)) < 1e-12

    def test_class_permutation_dense_loop(self):
        w = gen_class_permutation(4, 2, [1, 2])
        dense = w.to_dense()
        expected = sum(dense[i, j] for i in range(4) for j in range(4)) / 4
        assert abs(tau_density(T2, w) - expected) < 1e-14

    def test_density_bound_random(self, rng):
        for _ in range(10):
            n = int(rng.integers(2, 12))
            w = random_sparse_weights(rng, n, density=0.4)
            bound_base = check_scaling(w).max_row_abs_sum
            for order in range(1, 7):
                for t in enumerate_trees(order):
                    assert abs(tau_density(t, w)) <= bound_base ** (order - 1) + 1e-12

    def test_moment_consistency(self, rng):
        # integrating tau over all variables recovers the homomorphism
        # density when every fiber has unit mass
        g = Grid1D(-4, 4, 12)
        for _ in range(5):
            n = int(rng.integers(2, 6))
            w = random_sparse_weights(rng, n, density=0.5)
            f = random_fibers(rng, g, n)
            for order in (1, 2, 3):
                for t in enumerate_trees(order):
                    assert abs(tau(t, w, f).integral() - tau_density(t, w)) <= 1e-10


class TestHierarchy:
    def test_order_one_only(self, rng):
        g = Grid1D(-3, 3, 16)
        f = random_fibers(rng, g, 4)
        w = random_sparse_weights(rng, 4)
        h = hierarchy(w, f, n_max=1, lam=1.0)
        [ob] = list(h.observables.values())
        assert np.allclose(ob.values, marginal(f))

    def test_count_up_to_three(self, rng):
        g = Grid1D(-3, 3, 10)
        f = random_fibers(rng, g, 3)
        w = random_sparse_weights(rng, 3)
        h = hierarchy(w, f, n_max=3, lam=0.5)
        assert len(h.observables) == 1 + 1 + 2

    def test_identical_fiber_product_form(self):
        # identical fibers with constant row sums factorize exactly:
        # tau = w_bar^(m-1) * prof(x_1) ... prof(x_m)
        g = Grid1D(-4, 4, 12)
        n = 4
        f = gaussian_fibers(g, [0.1] * n, [0.8] * n)
        w = gen_uniform(n, 0.6, include_diagonal=True)
        prof = f.values[0]
        for t in (T2, T31):
            expected = np.array(0.6 ** (t.order - 1))
            for _ in range(t.order):
                expected = np.multiply.outer(expected, prof)
            assert np.abs(tau(t, w, f).values - expected).max() <= 1e-12

    def test_norm_zero(self):
        g = Grid1D(-2, 2, 8)
        f = FiberedDensity(grid=g, values=np.zeros((2, 8)))
        w = gen_uniform(2, 1.0)
        h = hierarchy(w, f, n_max=2, lam=2.0)
        assert hierarchy_norm(h) == 0.0

    def test_norm_single_tree_scaling(self):
        # a unit-L2 order-1 observable at lam = 4 contributes 4^(1/2) = 2
        g = Grid1D(0, 1, 16)
        vals = np.full((1, 16), 1.0)  # L2 norm 1 on [0,1]
        f = FiberedDensity(grid=g, values=vals)
        w = SparseWeights(1, [], [], [])
        h = hierarchy(w, f, n_max=1, lam=4.0)
        assert abs(hierarchy_norm(h) - 2.0) < 1e-12

    def test_norm_monotone_in_lambda(self, rng):
        g = Grid1D(-3, 3, 8)
        f = random_fibers(rng, g, 3)
        w = random_sparse_weights(rng, 3)
        norms = [hierarchy_norm(hierarchy(w, f, n_max=3, lam=lam)) for lam in (2.0, 1.0, 0.5)]
        assert norms[0] >= norms[1] >= norms[2]

    def test_lambda_admissible_reports(self, rng):
        g = Grid1D(-3, 3, 32)
        f = random_fibers(rng, g, 3)
        w = random_sparse_weights(rng, 3)
        ok_small, thr = lambda_admissible(1e-8, w, f, linear_attraction(), t_star=1.0)
        ok_big, _ = lambda_admissible(1e8, w, f, linear_attraction(), t_star=1.0)
        assert ok_small and not ok_big and thr > 0


class TestHierarchyResidual:
    def test_stationary_zero(self, rng):
        g = Grid1D(-3, 3, 32)
        f = random_fibers(rng, g, 3)
        w = SparseWeights(3, [], [], [])  # zero velocity field
        snaps = [
            FiberedDensity(grid=g, values=f.values, time=t) for t in (0.0, 0.1, 0.2)
        ]
        for t in (T1, T2):
            rep = hierarchy_residual(t, w, snaps, linear_attraction(), nu=0.0)
            assert rep.value <= 1e-10

    def test_order_one_matches_direct_coding(self, rng):
        g = Grid1D(0, 2 * math.pi, 64, topology="torus")
        vals = np.empty((4, 64))
        x = g.centers()
        for i in range(4):
            vals[i] = (1.0 + 0.3 * np.cos(x + i)) / (2 * math.pi)
        f0 = FiberedDensity(grid=g, values=vals)
        w = random_sparse_weights(rng, 4)
        k = kuramoto()
        res = solve(f0, w, k, nu=0.0, t_end=0.2, output_times=[0.1, 0.15, 0.2], dt=0.005)
        a = hierarchy_residual(T1, w, res.snapshots, k, nu=0.0)
        b = marginal_equation_residual(res.snapshots, w, k, nu=0.0)
        assert np.abs(a.field - b.field).max() <= 1e-10
        assert abs(a.value - b.value) <= 1e-10

    def test_needs_three_snapshots(self, rng):
        g = Grid1D(-3, 3, 16)
        f = random_fibers(rng, g, 2)
        w = random_sparse_weights(rng, 2)
        with pytest.raises(ValueError):
            hierarchy_residual(T1, w, [f, f], linear_attraction())

    def test_viscous_term_enters(self, rng):
        g = Grid1D(0, 2 * math.pi, 48, topology="torus")
        x = g.centers()
        vals = np.tile((1.0 + 0.4 * np.sin(x)) / (2 * math.pi), (2, 1))
        w = SparseWeights(2, [], [], [])
        snaps = [FiberedDensity(grid=g, values=vals, time=t) for t in (0.0, 0.1, 0.2)]
        r0 = hierarchy_residual(T1, w, snaps, kuramoto(), nu=0.0)
        r1 = hierarchy_residual(T1, w, snaps, kuramoto(), nu=0.1)
        assert r0.value <= 1e-12
        assert r1.value > 1e-4  # pure diffusion defect of a frozen profile
