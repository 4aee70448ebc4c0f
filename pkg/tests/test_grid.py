from __future__ import annotations

import math

import numpy as np
import pytest

from fbsde_coupling.errors import (ConfigurationError, DimensionError, DomainError,
                                   UnsupportedGridError)
from fbsde_coupling.grid import (CouplingFunction, HaarCoefficients, TimeGrid, build_coupled_path,
                                 haar_analyze, haar_synthesize, sample_paths, standard_normals)


def se_of_var(x):
    x = x - x.mean()
    return math.sqrt(np.var(x * x, ddof=1) / x.size)


def corr_se(n):
    return 1.0 / math.sqrt(n)


class TestTimeGrid:
    def test_nodes_and_step(self):
        g = TimeGrid(0.5, 2.0, 6)
        assert g.nodes[0] == 0.5 and g.nodes[-1] == 2.0
        assert np.all(np.diff(g.nodes) > 0)
        assert abs(g.step * g.n_steps - 1.5) < 1e-15

    @pytest.mark.parametrize("args", [(1.0, 1.0, 4), (2.0, 1.0, 4), (0.0, 1.0, 0), (0.0, 1.0, 2.5),
                                      (0.0, math.inf, 2)])
    def test_invalid(self, args):
        with pytest.raises(ConfigurationError):
            TimeGrid(*args)

    def test_index_of(self):
        g = TimeGrid(0.0, 1.0, 4)
        assert g.index_of(0.75) == 3
        with pytest.raises(ConfigurationError):
            g.index_of(0.3)

    def test_sub_and_refine(self):
        g = TimeGrid(0.0, 1.0, 8)
        s = g.sub(2, 6)
        assert (s.t_start, s.t_end, s.n_steps) == (0.25, 0.75, 4)
        assert g.refine(2).n_steps == 16
        assert g.is_dyadic and not TimeGrid(0.0, 1.0, 6).is_dyadic


class TestCouplingFunction:
    def test_indicator_cells_right_endpoint(self):
        g = TimeGrid(0.0, 1.0, 4)
        phi = CouplingFunction.indicator(0.25, 0.75)
        np.testing.assert_array_equal(phi.cell_values(g), [0, 1, 1, 0])
        assert phi(0.25) == 0.0 and phi(0.75) == 1.0

    def test_indicator_off_grid(self):
        with pytest.raises(ConfigurationError):
            CouplingFunction.indicator(0.1, 0.75).cell_values(TimeGrid(0.0, 1.0, 4))

    @pytest.mark.parametrize("r", [-0.1, 1.5, math.nan])
    def test_out_of_range(self, r):
        with pytest.raises(DomainError):
            CouplingFunction.constant(r)

    def test_tabulated(self):
        g = TimeGrid(0.0, 1.0, 4)
        phi = CouplingFunction.tabulated([0.0, 0.5, 1.0, 0.2], g)
        assert phi(0.5) == 0.5 and phi(0.51) == 1.0
        with pytest.raises(DimensionError):
            CouplingFunction.tabulated([0.1, 0.2], g)
        with pytest.raises(DomainError):
            CouplingFunction.tabulated([0.0, 0.5, 1.2, 0.2], g)


class TestSampling:
    def test_unit_variance(self, unit_bundle):
        w1 = unit_bundle.path().values[:, -1, 0]
        assert abs(w1.var() - 1.0) <= 0.02

    def test_variance_additivity(self):
        b = sample_paths(TimeGrid(0.0, 4.0, 4), 1, 100_000, seed=5)
        assert abs(b.path().values[:, -1, 0].var() - 4.0) <= 0.1

    def test_bitwise_reproducible(self):
        g = TimeGrid(0.0, 1.0, 8)
        a = sample_paths(g, 2, 3000, seed=42, stream_id=0)
        b = sample_paths(g, 2, 3000, seed=42, stream_id=0)
        assert np.array_equal(a.increments_w, b.increments_w)
        assert np.array_equal(a.increments_wprime, b.increments_wprime)

    def test_worker_count_and_prefix_invariance(self):
        g = TimeGrid(0.0, 1.0, 4)
        a = sample_paths(g, 1, 5000, seed=1, workers=1)
        b = sample_paths(g, 1, 5000, seed=1, workers=3)
        c = sample_paths(g, 1, 3000, seed=1)
        assert np.array_equal(a.increments_w, b.increments_w)
        assert np.array_equal(a.increments_w[:3000], c.increments_w)
        assert np.array_equal(a.head(3000).increments_wprime, c.increments_wprime)

    def test_increment_moments(self, fine_bundle):
        inc = fine_bundle.increments_w.ravel()
        step = fine_bundle.grid.step
        assert abs(inc.mean()) <= 5 * math.sqrt(step / inc.size)
        assert abs(inc.var() - step) <= 5 * se_of_var(inc)

    def test_legs_and_streams_independent(self, unit_bundle):
        n = unit_bundle.n_paths
        w = unit_bundle.increments_w.ravel()
        wp = unit_bundle.increments_wprime.ravel()
        assert abs(np.corrcoef(w, wp)[0, 1]) <= 5 * corr_se(n)
        other = sample_paths(unit_bundle.grid, 1, n, seed=unit_bundle.seed, stream_id=1)
        assert abs(np.corrcoef(w, other.increments_w.ravel())[0, 1]) <= 5 * corr_se(n)

    @pytest.mark.parametrize("args", [(0, 1), (10, 0)])
    def test_invalid_sizes(self, args):
        with pytest.raises(ConfigurationError):
            sample_paths(TimeGrid(0.0, 1.0, 2), args[1], args[0], seed=0)

    def test_coarsen_preserves_endpoint(self, fine_bundle):
        c = fine_bundle.coarsen(4)
        assert c.grid.n_steps == 16
        np.testing.assert_allclose(c.path().values[:, -1], fine_bundle.path().values[:, -1],
                                   atol=1e-12)
        np.testing.assert_allclose(c.path().values[:, 4], fine_bundle.path().values[:, 16],
                                   atol=1e-12)

    def test_standard_normals_chunk_keys(self):
        a = standard_normals(3, (0, 0), 5000, (2,))
        b = standard_normals(3, (0, 1), 5000, (2,))
        assert not np.array_equal(a, b)


class TestCoupledPath:
    def test_phi_zero_identity(self, fine_bundle):
        inc = build_coupled_path(fine_bundle, CouplingFunction.zero())
        assert np.array_equal(inc, fine_bundle.increments_w)

    def test_phi_one_replacement(self, fine_bundle):
        inc = build_coupled_path(fine_bundle, CouplingFunction.constant(1.0))
        assert np.array_equal(inc, fine_bundle.increments_wprime)

    def test_cellwise_identity(self, quarter_bundle):
        phi = CouplingFunction.tabulated([0.0, 0.3, 0.8, 1.0], quarter_bundle.grid)
        inc = build_coupled_path(quarter_bundle, phi)
        v = phi.cell_values(quarter_bundle.grid)[None, :, None]
        expect = np.sqrt(1 - v ** 2) * quarter_bundle.increments_w + v * quarter_bundle.increments_wprime
        assert np.array_equal(inc, expect)

    def test_covariance_at_06(self, unit_bundle):
        w = unit_bundle.path().values[:, -1, 0]
        wphi = unit_bundle.coupled_path(CouplingFunction.constant(0.6)).values[:, -1, 0]
        assert abs(np.cov(w, wphi)[0, 1] - 0.8) <= 0.02

    @pytest.mark.parametrize("r", [0.0, 0.25, 0.5, 0.9, 1.0])
    def test_correlation(self, unit_bundle, r):
        w = unit_bundle.path().values[:, -1, 0]
        wphi = unit_bundle.coupled_path(CouplingFunction.constant(r)).values[:, -1, 0]
        rho = math.sqrt(1 - r * r)
        # Fisher-type standard error of a sample correlation
        se = (1 - rho ** 2) / math.sqrt(unit_bundle.n_paths) + 1e-12
        assert abs(np.corrcoef(w, wphi)[0, 1] - rho) <= 5 * se

    def test_cell_variance_preserved(self, fine_bundle):
        phi = CouplingFunction.indicator(0.25, 0.5)
        inc = build_coupled_path(fine_bundle, phi)[:, :, 0]
        step = fine_bundle.grid.step
        for k in (0, 20, 40):
            assert abs(inc[:, k].var() - step) <= 5 * se_of_var(inc[:, k])


class TestHaar:
    def test_zeroth_coefficient(self, quarter_bundle):
        c = haar_analyze(quarter_bundle, 1)
        np.testing.assert_allclose(c.coeffs[:, 0, 0], quarter_bundle.path().values[:, -1, 0],
                                   atol=1e-12)

    def test_two_step_reconstruction(self):
        b = sample_paths(TimeGrid(0.0, 1.0, 2), 1, 100, seed=9)
        rec = haar_synthesize(haar_analyze(b, 2), b.grid)
        np.testing.assert_allclose(rec, b.increments_w, atol=1e-14)

    def test_round_trip_four_steps(self, quarter_bundle):
        rec = haar_synthesize(haar_analyze(quarter_bundle, 4), quarter_bundle.grid)
        assert np.max(np.abs(rec - quarter_bundle.increments_w)) <= 1e-14

    def test_unit_variance(self, quarter_bundle):
        c = haar_analyze(quarter_bundle, 4).coeffs[:, :, 0]
        assert np.all(np.abs(c.var(axis=0) - 1.0) <= 0.02)

    def test_zero_coefficients(self):
        g = TimeGrid(0.0, 2.0, 8)
        out = haar_synthesize(HaarCoefficients(g, 8, np.zeros((3, 8, 1))), g)
        assert np.array_equal(out, np.zeros((3, 8, 1)))

    def test_synthesis_from_gaussians(self):
        g = TimeGrid(0.0, 2.0, 8)
        z = np.random.default_rng(0).standard_normal((100_000, 8, 1))
        wT = haar_synthesize(HaarCoefficients(g, 8, z), g).sum(axis=1)[:, 0]
        assert abs(wT.var() - 2.0) <= 5 * se_of_var(wT)

    def test_non_dyadic(self):
        b = sample_paths(TimeGrid(0.0, 1.0, 6), 1, 10, seed=0)
        with pytest.raises(UnsupportedGridError):
            haar_analyze(b, 2)

    def test_level_mismatch(self, quarter_bundle):
        with pytest.raises(DimensionError):
            haar_synthesize(haar_analyze(quarter_bundle, 2), quarter_bundle.grid)
