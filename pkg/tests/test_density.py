import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from hiertmle.density import (BinGrid, ConditionalDensityModel, DensityConfig, HazardModel, default_k,
                              density_at, fit_density, fit_hazards, long_format, make_grid, masses_from_hazards)
from hiertmle.errors import DegenerateSupport


class TestGrid:
    def test_equal_width_example(self):
        g = make_grid([0, 1, 2, 3, 4], 2)
        assert g.cutoffs[0] == 0 and g.cutoffs[1] == 2
        assert g.cutoffs[2] == np.nextafter(4.0, np.inf)

    def test_single_bin(self):
        g = make_grid([0.2, 0.5, 0.9], 1)
        assert g.K == 1
        model = fit_density([0.2, 0.5, 0.9], np.zeros((3, 0)), DensityConfig(k_bins=1), grid=g)
        bw = g.bandwidths[0]
        np.testing.assert_allclose(model.density([0.2, 0.5, 0.9], np.zeros((3, 0))), 1.0 / bw, rtol=1e-12)

    def test_equal_mass_uniform(self):
        a = np.random.default_rng(0).uniform(size=10_000)
        g = make_grid(a, 10, "equal_mass")
        frac = np.bincount(g.index(a), minlength=g.K) / a.size
        assert g.K == 10
        assert np.all(np.abs(frac - 0.1) <= 0.015)

    def test_equal_mass_collapses_ties(self):
        g = make_grid([0, 0, 0, 0, 0, 0, 1, 2], 4, "equal_mass")
        assert g.K < 4
        assert np.all(np.diff(g.cutoffs) > 0)

    def test_denby_mallows_between(self):
        a = np.random.default_rng(1).exponential(size=2000)
        ew = make_grid(a, 8, "equal_width").cutoffs
        em = make_grid(a, 8, "equal_mass").cutoffs
        dm = make_grid(a, 8, "denby_mallows").cutoffs
        # interior cutoffs sit between the two classical rules
        inner = slice(1, -1)
        lo, hi = np.minimum(ew, em)[inner], np.maximum(ew, em)[inner]
        assert np.all((dm[inner] >= lo - 1e-12) & (dm[inner] <= hi + 1e-12))

    def test_degenerate(self):
        with pytest.raises(DegenerateSupport):
            make_grid([1.0, 1.0, 1.0], 3)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=60),
           st.integers(1, 12), st.sampled_from(["equal_width", "equal_mass", "denby_mallows"]))
    def test_covers_all_values(self, vals, k, strategy):
        a = np.asarray(vals)
        if a.min() == a.max():
            return
        g = make_grid(a, k, strategy)
        assert np.all(np.diff(g.cutoffs) > 0)
        assert np.all(g.index(a) >= 0)
        assert g.K <= k

    def test_default_k(self):
        assert default_k(1) == 2 and default_k(1000) == 10 and default_k(10 ** 6) == 20


class TestLongFormat:
    @given(st.lists(st.integers(0, 6), min_size=1, max_size=40))
    def test_censoring(self, bins):
        bins = np.asarray(bins)
        obs, k, event = long_format(bins, 7)
        assert obs.size == int((bins + 1).sum())
        np.testing.assert_array_equal(np.bincount(obs, weights=event, minlength=bins.size), 1)
        assert np.all(k[event == 1] == bins)


class TestHazards:
    def test_hand_set_hazards(self):
        np.testing.assert_allclose(masses_from_hazards(np.array([[0.5, 1.0]])), [[0.5, 0.5]])

    def test_binary_intercept_is_frequency(self):
        a = np.random.default_rng(3).integers(0, 2, 301).astype(float)
        model = fit_density(a, np.zeros((a.size, 0)))
        assert model.masses(np.zeros((1, 0)))[0, 1] == pytest.approx(a.mean(), abs=1e-9)

    def test_no_covariates_empirical_frequencies(self):
        a = np.random.default_rng(4).normal(size=500)
        g = make_grid(a, 8)
        model = fit_density(a, np.zeros((500, 0)), DensityConfig(), grid=g)
        freq = np.bincount(g.index(a), minlength=g.K) / a.size
        np.testing.assert_allclose(model.masses(np.zeros((1, 0)))[0], freq, atol=1e-6)

    def test_all_in_one_bin(self):
        a = np.array([0.1, 0.15, 0.12, 0.9])
        g = BinGrid(cutoffs=np.array([0.0, 0.5, 1.0]))
        model = fit_density(a[:3], np.zeros((3, 0)), grid=g)
        m = model.masses(np.zeros((1, 0)))[0]
        assert m[0] == pytest.approx(1.0, abs=1e-5)

    def test_uniform_histogram(self):
        a = np.random.default_rng(5).uniform(size=10_000)
        model = fit_density(a, np.zeros((a.size, 0)), DensityConfig(k_bins=10))
        assert density_at(model, 0.55, np.zeros((1, 0))) == pytest.approx(1.0, abs=0.1)

    def test_outside_support_zero(self):
        a = np.random.default_rng(5).uniform(size=100)
        model = fit_density(a, np.zeros((a.size, 0)), DensityConfig(k_bins=4))
        assert density_at(model, 2.0, np.zeros((1, 0))) == 0.0

    def test_more_bins_beat_two_for_normal(self):
        rng = np.random.default_rng(6)
        W = rng.normal(size=10_000)
        A = W + rng.normal(size=10_000)
        X = W[:, None]
        grid_pts = np.linspace(-2, 2, 41)
        ctx = np.linspace(-1, 1, 11)

        def mise(k):
            model = fit_density(A, X, DensityConfig(k_bins=k, candidates=("main",)))
            err = 0.0
            for w in ctx:
                est = model.density(grid_pts, np.full((grid_pts.size, 1), w))
                err += np.mean((est - norm.pdf(grid_pts, loc=w)) ** 2)
            return err / ctx.size

        assert mise(20) < mise(2)

    def test_cv_selects_covariate_model(self):
        rng = np.random.default_rng(7)
        W = rng.normal(size=2000)
        A = 2 * W + rng.normal(size=2000)
        model = fit_density(A, W[:, None])
        assert model.cv_risk["selected"] in ("main", "interactions")
        assert model.cv_risk["risks"]["intercept"] > model.cv_risk["risks"]["main"]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["intercept", "main", "interactions"]))
def test_normalization_random_contexts(seed, kind):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(300, 2))
    A = X @ [1.0, -0.5] + rng.normal(size=300)
    bins = make_grid(A, 8).index(A)
    hz, _ = fit_hazards(bins, X, make_grid(A, 8), candidates=(kind,), cv_folds=1)
    m = masses_from_hazards(hz.hazards(rng.normal(scale=3, size=(100, 2))))
    assert np.all(m >= 0)
    assert np.all(np.abs(m.sum(axis=1) - 1) <= 1e-9)


def test_fixed_model():
    g = BinGrid(levels=np.array([0.0, 1.0]))
    model = ConditionalDensityModel.fixed(g, [0.3, 0.7])
    np.testing.assert_allclose(model.masses(np.zeros((3, 2))), [[0.3, 0.7]] * 3, atol=1e-12)
    assert model.density(1.0, np.zeros((1, 2)))[0] == pytest.approx(0.7)


def test_sampling_matches_masses():
    rng = np.random.default_rng(8)
    a = rng.normal(size=400)
    model = fit_density(a, np.zeros((400, 0)), DensityConfig(k_bins=6))
    m = model.masses(np.zeros((1, 0)))[0]
    draws = model.sample(np.zeros((100_000, 0)), np.random.default_rng(9))
    freq = np.bincount(model.grid.index(draws), minlength=6) / draws.size
    assert np.all(np.abs(freq - m) <= 4 / np.sqrt(1e5))


def test_diverging_hazard_fit_falls_back(monkeypatch):
    from hiertmle import density
    from hiertmle.errors import NonConvergence

    def boom(*args, **kwargs):
        raise NonConvergence("forced")

    monkeypatch.setattr(density, "fit_logistic", boom)
    rng = np.random.default_rng(10)
    X = rng.normal(size=(300, 1))
    a = X[:, 0] + rng.normal(size=300)
    model = fit_density(a, X, DensityConfig(k_bins=5, candidates=("main",)))
    assert model.hazard.kind == "intercept"
    g = model.grid
    np.testing.assert_allclose(model.masses(X[:1])[0], np.bincount(g.index(a), minlength=5) / 300, atol=1e-6)
