import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_dataset
from hiertmle.data import HierarchicalDataset
from hiertmle.density import DensityConfig, fit_density
from hiertmle.features import SummarySpec, community_context
from hiertmle.individual import IndividualGConfig, fit_individual_density, individual_clever_covariate
from hiertmle.inference import eic_values
from hiertmle.interventions import InterventionSpec
from hiertmle.pipeline import EstimatorConfig, estimate, fit_nuisances
from hiertmle.simulate import generate, preset
from hiertmle.tmle import LEVEL_COMMUNITY, LEVEL_INDIVIDUAL, TargetingConfig, individual_inputs, target

SUMMARY_SD = SummarySpec(stats=("mean", "sd"))


@pytest.fixture(scope="module")
def small_ds():
    return generate(preset("continuous", J=7, N=3, seed=21))


def brute_force_masses(ds, base, summary):
    """Average ĝ over every W_-i profile by building each hypothetical community explicitly."""
    comms = ds.communities
    rows = []  # (individual index, e, w matrix)
    others = []
    for j, c in enumerate(comms):
        for i in range(c.n):
            others.append(np.array([r.w for k, r in enumerate(c.individuals) if k != i]))
    e_list, w_list, sizes = [], [], []
    for idx in range(ds.n_individuals):
        j = ds.group[idx]
        for rest in others:
            e_list.append(ds.e[j])
            w_list.append(np.vstack([ds.w[idx][None, :], rest]))
            sizes.append(len(rest) + 1)
    J = len(e_list)
    group = np.repeat(np.arange(J), sizes)
    w = np.vstack(w_list)
    hyp = HierarchicalDataset(tuple(f"h{k}" for k in range(J)), np.array(e_list), np.zeros(J), w,
                              np.zeros(w.shape[0]), 1.0 / np.asarray(sizes, float)[group], group, (0.0, 1.0))
    m = base.masses(community_context(hyp, summary))
    return m.reshape(ds.n_individuals, len(others), -1).mean(axis=1)


@pytest.mark.parametrize("summary", [SummarySpec(), SUMMARY_SD])
def test_brute_force_marginalization(small_ds, summary):
    base = fit_density(small_ds.a, community_context(small_ds, summary), DensityConfig(k_bins=5, candidates=("main",)))
    model = fit_individual_density(small_ds, summary=summary, base=base)
    assert model.exact
    np.testing.assert_allclose(model.masses(small_ds), brute_force_masses(small_ds, base, summary),
                               atol=1e-10, rtol=0)


def test_single_individual_equals_community(single_ds):
    X = community_context(single_ds)
    base = fit_density(single_ds.a, X, DensityConfig(k_bins=6))
    model = fit_individual_density(single_ds, base=base)
    np.testing.assert_allclose(model.masses(single_ds), base.masses(X), atol=1e-14)
    spec = InterventionSpec("shift", nu=0.5)
    from hiertmle.tmle import clever_covariate
    np.testing.assert_allclose(individual_clever_covariate(model, spec, single_ds.a, single_ds, floor=0.0),
                               clever_covariate(base, spec, single_ds.a, X, floor=0.0), atol=1e-14)


def test_identical_rows_reduce_to_community():
    train = generate(preset("continuous", J=80, N=4, seed=22))
    base = fit_density(train.a, community_context(train), DensityConfig(k_bins=5))
    rng = np.random.default_rng(0)
    ds = make_dataset(rng.normal(size=10), [[0.5] * 4] * 10, e=rng.normal(size=10), w_rows=[[0.7] * 4] * 10)
    model = fit_individual_density(ds, base=base)
    np.testing.assert_allclose(model.masses(ds), base.masses(community_context(ds))[ds.group], atol=1e-14)


def test_within_plan_reproduces_community(small_ds):
    base = fit_density(small_ds.a, community_context(small_ds), DensityConfig(k_bins=5))
    model = fit_individual_density(small_ds, cfg=IndividualGConfig(plan="within"), base=base)
    np.testing.assert_allclose(model.masses(small_ds), base.masses(community_context(small_ds))[small_ds.group])


def test_monte_carlo_profiles_when_large():
    ds = generate(preset("continuous", J=60, N=10, seed=23))
    model = fit_individual_density(ds, DensityConfig(k_bins=5), IndividualGConfig(exact_limit=1000, m_profiles=50))
    assert not model.exact
    assert model.profiles.shape[0] <= 50


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_marginal_masses_normalized(seed):
    ds = generate(preset("continuous", J=30, N=4, seed=seed))
    model = fit_individual_density(ds, DensityConfig(k_bins=6))
    rng = np.random.default_rng(seed)
    for _ in range(100 // 10):
        idx = rng.integers(ds.n_individuals)
        e = rng.normal(scale=2, size=ds.s)
        w = rng.normal(scale=2, size=ds.p)
        m = model.masses_at(e, w, 0.25, 4)
        assert np.all(m >= 0)
        assert abs(m.sum() - 1) <= 1e-9
    assert np.all(np.abs(model.masses(ds).sum(axis=1) - 1) <= 1e-9)


def test_identity_gstar_gives_unit_ratio(small_ds):
    model = fit_individual_density(small_ds, DensityConfig(k_bins=5))
    H = individual_clever_covariate(model, InterventionSpec("shift", nu=0.0), small_ds.a[small_ds.group], small_ds)
    np.testing.assert_allclose(H, 1.0, rtol=1e-12)


def test_shift_ratio_matches_marginal_masses(small_ds):
    model = fit_individual_density(small_ds, DensityConfig(k_bins=5))
    m = model.masses(small_ds)
    a = small_ds.a[small_ds.group]
    H = individual_clever_covariate(model, InterventionSpec("shift", nu=0.5), a, small_ds, ratio_cap=1e12)
    c = model.grid.cutoffs
    bw = np.diff(c)
    rows = np.arange(a.size)
    ks = np.searchsorted(c, a - 0.5, side="right") - 1
    ko = np.searchsorted(c, a, side="right") - 1
    ok = (ks >= 0) & (ks < bw.size)
    ksc = np.clip(ks, 0, bw.size - 1)
    expected = np.where(ok, m[rows, ksc] / bw[ksc], 0.0) / (m[rows, ko] / bw[ko])
    np.testing.assert_allclose(H, expected, rtol=1e-12, atol=1e-12)


def test_eic_is_alpha_average_of_individual_terms(binary_ds):
    cfg = EstimatorConfig(targeting=TargetingConfig(level=LEVEL_INDIVIDUAL))
    nz = fit_nuisances(binary_ds, cfg)
    spec = InterventionSpec("static", a_star=1.0)
    inp, _ = individual_inputs(binary_ds, spec, nz.g_ind, nz.outcome, cfg.targeting, masses=nz.g_ind_masses)
    fit = target(inp)
    d = eic_values(fit)
    psi = float(np.mean(np.bincount(inp.group, weights=inp.row_weight * fit.integrals())))
    per_ind = inp.h_obs * (inp.y - fit.q_star_obs) + fit.integrals() - psi
    direct = np.array([np.sum(inp.row_weight[inp.group == j] * per_ind[inp.group == j]) for j in range(binary_ds.J)])
    np.testing.assert_allclose(d.values, direct, atol=1e-12)


@pytest.mark.parametrize("spec", [InterventionSpec("static", a_star=1.0), InterventionSpec("static", a_star=0.0)])
def test_n1_pipelines_agree(single_ds, spec):
    ind = estimate(single_ds, spec, EstimatorConfig(targeting=TargetingConfig(level=LEVEL_INDIVIDUAL)))
    com = estimate(single_ds.collapse_to_environment(), spec,
                   EstimatorConfig(targeting=TargetingConfig(level=LEVEL_COMMUNITY)))
    assert ind.psi_hat == pytest.approx(com.psi_hat, abs=1e-10)
    assert ind.sigma2 == pytest.approx(com.sigma2, abs=1e-10)


def test_varying_sizes_warn(caplog):
    ds = generate(preset("well_specified", J=40, N=5, N_range=(3, 7), seed=24))
    rep = estimate(ds, InterventionSpec("static", a_star=1.0),
                   EstimatorConfig(targeting=TargetingConfig(level=LEVEL_INDIVIDUAL)))
    assert any("constant N" in w for w in rep.warnings)
