from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from fbsde_coupling.errors import (ConfigurationError, DimensionError, IllConditionedBasisError,
                                   IterationDivergenceError, SolvabilityError, StructuralError,
                                   UnsupportedExponentError)
from fbsde_coupling.fbsde import (FbsdeSpec, PicardConfig, Sigma, SolutionTriple,
                                  a_linearity_residual, apriori_check, build_augmented_system,
                                  c_of_phi, check_solvability, contraction_ratio, lipschitz_excess,
                                  recommend_delta, solution_l2_error, solve_small_interval,
                                  theta_norm, with_terminal_shift, z_gap_identity)
from fbsde_coupling.grid import CouplingFunction, DiscretePath, TimeGrid, sample_paths
from fbsde_coupling.library import SPECS, affine_random, build_spec, linear, martingale, trig_bounded
from fbsde_coupling.regression import RegressionConfig
from fbsde_coupling.stats import mc_estimate


def sup_abs_bm_second_moment() -> float:
    """E[(sup_{[0,1]} |W|)^2] from the series for the law of the two-sided maximum."""
    k = np.arange(60)

    def cdf(x):
        if x <= 0:
            return 0.0
        return float(4 / np.pi * np.sum((-1.0) ** k / (2 * k + 1)
                                        * np.exp(-(2 * k + 1) ** 2 * np.pi ** 2 / (8 * x * x))))

    return integrate.quad(lambda x: 2 * x * (1 - cdf(x)), 0, 12, limit=200)[0]


def zero_triple(grid, P):
    K = grid.n_steps
    return SolutionTriple(grid, np.zeros((P, K + 1, 1)), np.zeros((P, K + 1, 1)),
                          np.zeros((P, K + 1, 1, 1)))


@pytest.fixture(scope="module")
def bundle64():
    return sample_paths(TimeGrid(0.0, 1.0, 64), 1, 20_000, seed=11)


class TestSolvability:
    def test_pass_below_one(self):
        v = check_solvability(linear(gx=0.5, a=1.5), 2)
        assert v.product == pytest.approx(0.75) and v.passed

    def test_strict_inequality(self):
        v = check_solvability(linear(gx=1.0, a=1.0), 2)
        assert v.product == 1.0 and not v.passed

    def test_zero_product(self):
        assert check_solvability(linear(gx=100.0, a=0.0), 2).passed

    def test_p_above_two_needs_bdg(self):
        with pytest.raises(ConfigurationError):
            check_solvability(linear(gx=0.1, a=0.1), 4)

    def test_p_above_two_value(self):
        v = check_solvability(linear(gx=0.1, a=0.1), 4, bdg=(1.0, 2.0))
        # 2^{1/4} (4/3 + 2 * 1 * 7/3) = 6 * 2^{1/4}
        assert v.value == pytest.approx(6 * 2 ** 0.25 * 0.01, rel=1e-12)
        assert v.passed

    def test_p_below_two(self):
        with pytest.raises(UnsupportedExponentError):
            check_solvability(martingale(), 1.5)

    def test_recommended_delta(self, bundle64):
        v = check_solvability(linear(gx=0.8, a=0.5), 2, bundle=bundle64)
        assert v.recommended_delta is not None and 0 < v.recommended_delta <= 1.0
        assert v.picard_ratio < 0.5

    def test_recommend_delta_halves(self, bundle64):
        delta, ratio = recommend_delta(linear(gx=0.9, a=0.95, by=1.0), bundle64, target=0.05)
        assert delta < 1.0


class TestSolver:
    def test_martingale(self, bundle64):
        sol = solve_small_interval(martingale(), None, bundle64)
        w = bundle64.path().values
        err = solution_l2_error(sol, X=w, Y=w, Z=1.0)
        assert err["X"] == 0.0 and err["Y"] <= 0.05 and err["Z"] <= 0.05
        assert np.all(sol.Z[:, 0] == 0.0)

    def test_degenerate_constant_terminal(self, bundle64):
        spec = linear(x0=0.3, s0=0.0, gx=0.0, g0=2.5)
        sol = solve_small_interval(spec, None, bundle64)
        assert np.all(sol.Y == 2.5) and np.all(sol.Z == 0.0) and np.all(sol.X == 0.3)

    def test_picard_contraction(self, bundle64):
        a, gamma = 0.5, 0.8
        sol = solve_small_interval(linear(a=a, gx=gamma), None, bundle64, PicardConfig(tol=1e-9))
        rho = contraction_ratio(sol.residuals)
        assert 0 < rho < 1
        res = np.asarray(sol.residuals)
        assert np.all(np.diff(res) < 0)
        # Y = gamma X, Z = gamma (1 + a Z)  =>  Z = gamma / (1 - a gamma)
        assert mc_estimate(sol.Z[:, 1:].ravel()).mean == pytest.approx(gamma / (1 - a * gamma), rel=0.01)

    def test_divergence_error_carries_history(self, bundle64):
        with pytest.raises(IterationDivergenceError) as info:
            solve_small_interval(linear(by=1.0, gx=0.9, a=0.5), None, bundle64,
                                 PicardConfig(max_iter=2, tol=1e-14))
        assert len(info.value.residuals) == 2

    def test_ill_conditioned_basis(self, bundle64):
        with pytest.raises(IllConditionedBasisError):
            solve_small_interval(martingale(), None, bundle64,
                                 regression=RegressionConfig(include_brownian=True))

    def test_gate(self, bundle64):
        with pytest.raises(SolvabilityError):
            solve_small_interval(linear(gx=1.0, a=1.0), None, bundle64)

    def test_delta_guard(self, bundle64):
        with pytest.raises(SolvabilityError):
            solve_small_interval(martingale(), None, bundle64, delta=0.5)

    def test_window(self, bundle64):
        grid = bundle64.grid.sub(32, 64)
        sol = solve_small_interval(martingale(), grid, bundle64, x0=bundle64.path().at(32))
        w = bundle64.path().values[:, 32:]
        assert solution_l2_error(sol, X=w, Y=w)["Y"] <= 0.05
        with pytest.raises(ConfigurationError):
            solve_small_interval(martingale(), TimeGrid(0.0, 0.3, 3), bundle64)
        with pytest.raises(DimensionError):
            solve_small_interval(martingale(), TimeGrid(0.0, 0.5, 3), bundle64)

    def test_dimension_mismatch(self):
        b = sample_paths(TimeGrid(0.0, 1.0, 4), 2, 100, seed=0)
        with pytest.raises(DimensionError):
            solve_small_interval(martingale(), None, b)

    def test_adapted_solution(self, bundle64):
        """Redrawing one path's future moves early values only through the shared regression fit."""
        head = bundle64.head(4000)
        spec = linear(a=0.5, gx=0.8)
        sol = solve_small_interval(spec, None, head, PicardConfig(tol=1e-10))
        inc = head.increments_w.copy()
        inc[0, 40:] = np.random.default_rng(1).normal(size=inc[0, 40:].shape) * math.sqrt(head.grid.step)
        other = solve_small_interval(spec, None, DiscretePath(head.grid, inc), PicardConfig(tol=1e-10))
        scale = np.max(np.abs(sol.X))
        assert np.max(np.abs(sol.X[:, :41] - other.X[:, :41])) <= 1e-3 * scale
        assert np.max(np.abs(sol.X[0, 41:] - other.X[0, 41:])) > 1e-2


class TestNorms:
    def test_zero(self):
        assert theta_norm(zero_triple(TimeGrid(0.0, 1.0, 8), 10), 2) == 0.0

    def test_unit_z(self):
        sol = zero_triple(TimeGrid(0.0, 1.0, 8), 10)
        sol.Z[:, 1:] = 1.0
        assert theta_norm(sol, 2) == pytest.approx(1.0, abs=1e-14)

    def test_brownian_sup(self):
        grid = TimeGrid(0.0, 1.0, 256)
        b = sample_paths(grid, 1, 100_000, seed=17)
        sol = zero_triple(grid, b.n_paths)
        sol.X = b.path().values
        value = theta_norm(sol, 2)
        oracle = sup_abs_bm_second_moment()
        assert oracle == pytest.approx(1.8319, abs=1e-3)
        assert value <= 4.0
        # The grid maximum underestimates the continuous one by O(sqrt(step)).
        assert oracle - 0.15 <= value <= oracle

    def test_p_below_one(self):
        with pytest.raises(UnsupportedExponentError):
            theta_norm(zero_triple(TimeGrid(0.0, 1.0, 2), 2), 0.5)

    def test_monotone(self, bundle64):
        sol = solve_small_interval(martingale(), None, bundle64.head(2000))
        big = SolutionTriple(sol.grid, 2 * sol.X, sol.Y, sol.Z)
        assert theta_norm(big, 2) > theta_norm(sol, 2)


class TestApriori:
    def test_zero_spec(self, bundle64):
        spec = linear(s0=0.0, gx=0.0)
        sol = solve_small_interval(spec, None, bundle64.head(1000))
        rep = apriori_check(spec, sol, 2)
        assert rep.norm == 0.0 and rep.potential == 0.0 and not rep.flagged

    def test_refinement_stability(self):
        fine = sample_paths(TimeGrid(0.0, 1.0, 256), 1, 20_000, seed=23)
        ratios = []
        for factor in (4, 2, 1):
            b = fine.coarsen(factor)
            sol = solve_small_interval(martingale(), None, b)
            ratios.append(apriori_check(martingale(), sol, 2).ratio)
        assert all(math.isfinite(r) for r in ratios)
        assert max(ratios) / min(ratios) <= 1.2

    def test_homogeneous_scaling(self, bundle64):
        spec1 = linear(x0=1.0, s0=0.0, sx=0.3, by=0.2, a=0.2, fx=0.1, gx=0.5)
        spec2 = linear(x0=2.0, s0=0.0, sx=0.3, by=0.2, a=0.2, fx=0.1, gx=0.5)
        n1 = theta_norm(solve_small_interval(spec1, None, bundle64, PicardConfig(tol=1e-10)), 2)
        n2 = theta_norm(solve_small_interval(spec2, None, bundle64, PicardConfig(tol=1e-10)), 2)
        assert n2 / n1 == pytest.approx(4.0, rel=1e-6)

    def test_stability_under_terminal_shift(self, bundle64):
        spec = linear(a=0.5, gx=0.8, by=0.3)
        bundle = bundle64.head(5000)
        base = solve_small_interval(spec, None, bundle, PicardConfig(max_iter=100, tol=1e-8))
        consts = []
        for kappa in (0.1, 0.01):
            sol = solve_small_interval(with_terminal_shift(spec, kappa), None, bundle,
                                       PicardConfig(max_iter=100, tol=1e-8))
            diff = SolutionTriple(sol.grid, sol.X - base.X, sol.Y - base.Y, sol.Z - base.Z)
            consts.append(theta_norm(diff, 2) / kappa ** 2)
        assert consts[0] > 0
        assert consts[0] == pytest.approx(consts[1], rel=0.2)


class TestStructure:
    @pytest.mark.parametrize("name", sorted(SPECS))
    def test_a_linearity(self, name, bundle64):
        path = bundle64.head(1000).path()
        assert a_linearity_residual(build_spec(name), path) <= 1e-12

    @pytest.mark.parametrize("name", sorted(SPECS))
    def test_declared_lipschitz(self, name, bundle64):
        path = bundle64.head(1000).path()
        excess = lipschitz_excess(build_spec(name), path)
        assert max(excess.values()) <= 1e-9

    def test_missing_split(self):
        spec = FbsdeSpec(1, 1, 1, np.zeros(1), None, None, lambda path, x: x)
        with pytest.raises(StructuralError):
            build_augmented_system(spec, CouplingFunction.constant(0.5), TimeGrid(0.0, 1.0, 4))

    def test_c_of_phi(self):
        c = c_of_phi(np.array([0.0, 0.6, 1.0]))
        np.testing.assert_allclose(c, [0.0, (1 - 0.8) / 0.6, 1.0])
        phi = np.linspace(0, 1, 101)
        assert np.all((0 <= c_of_phi(phi)) & (c_of_phi(phi) <= phi))

    def test_augmented_lipschitz(self):
        spec = linear(bx=0.3, by=0.2, bz=0.7, fx=0.1, fz=0.4, a=0.3, gx=0.5)
        grid = TimeGrid(0.0, 1.0, 4)
        joint = sample_paths(grid, 1, 1000, seed=3).joint_path()
        for phi in (CouplingFunction.constant(0.6), CouplingFunction.constant(1.0),
                    CouplingFunction.indicator(0.25, 0.5)):
            aug = build_augmented_system(spec, phi, grid)
            assert aug.origin.lipschitz.b[2] == pytest.approx(math.sqrt(2) * 0.7)
            for s in (aug.origin, aug.coupled):
                assert max(lipschitz_excess(s, joint, n_samples=5000).values()) <= 1e-9

    def test_sigma_collapse(self):
        spec = affine_random()
        path = sample_paths(TimeGrid(0.0, 1.0, 4), 1, 200, seed=4).path()
        rng = np.random.default_rng(0)
        x, y, z = rng.normal(size=(3, 200, 1))
        z = z[:, :, None]
        out = Sigma(spec, 2, path, 0.0, x, y, z, np.zeros_like(z))
        np.testing.assert_allclose(out[:, :, :1], spec.mu(2, path, x, y, z), atol=1e-15)
        assert np.all(out[:, :, 1:] == 0.0)
        one = Sigma(spec, 2, path, 1.0, x, y, z, z)
        np.testing.assert_allclose(one[:, :, :1], spec.A(2, path, z), atol=1e-12)
        np.testing.assert_allclose(one[:, :, 1:], spec.sigma(2, path, x, y) + spec.A(2, path, z),
                                   atol=1e-12)

    def test_transfer_routes_agree(self):
        """Solving against W^phi directly and solving the coupled augmented system coincide."""
        spec = linear(a=0.5, gx=0.8)
        grid = TimeGrid(0.0, 1.0, 32)
        b = sample_paths(grid, 1, 20_000, seed=5)
        phi = CouplingFunction.indicator(0.25, 0.75)
        direct = solve_small_interval(spec, None, b.coupled_path(phi), PicardConfig(tol=1e-9))
        aug = build_augmented_system(spec, phi, grid)
        joint = solve_small_interval(aug.coupled, None, b.joint_path(), PicardConfig(tol=1e-9))
        assert np.sqrt(np.mean((direct.X - joint.X) ** 2)) <= 0.02
        assert np.sqrt(np.mean((direct.Y - joint.Y) ** 2)) <= 0.02


class TestZGapIdentity:
    def test_identity_and_bounds(self):
        rng = np.random.default_rng(7)
        z = rng.normal(size=(1000, 2, 3))
        zp = rng.normal(size=(1000, 2, 3))
        phi = rng.uniform(size=1000)
        lhs, rhs = z_gap_identity(z, zp, phi)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12
        sq = lambda a: np.sum(a.reshape(1000, -1) ** 2, axis=1)  # noqa: E731
        assert np.all(lhs >= sq(zp - z) / 2 - 1e-12)
        assert np.all(lhs >= (1 - np.sqrt(1 - phi ** 2)) * sq(z) - 1e-12)
