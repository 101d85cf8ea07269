"""Individual-level exposure densities ĝ_I(a | e, w_i) for the restricted model.

The community-level model ĝ(a | e, W) sees the covariate matrix through
α-weighted moments, so the rest of the community (``W_-i``) enters only via
its moment sums. A *profile* is one such set of sums,
``(sum alpha_l w_l, sum alpha_l w_l^2, sum alpha_l)`` over ``l != i``. The
marginal ĝ_I averages ĝ over profiles:

``pooled``  profiles ``W_{j',-i'}`` for every individual in the data (the
            empirical distribution of ``W_-i`` ignoring ``W_i``);
``within``  the individual's own community only, which reproduces ĝ.

When ``(#individuals)^2`` exceeds ``exact_limit`` a fixed random subset of
``m_profiles`` profiles is used instead, shared by all individuals.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import HierarchicalDataset
from .density import ConditionalDensityModel, DensityConfig, fit_density
from .features import SummarySpec, community_context, context_from_moments
from .interventions import InterventionSpec, build_gstar

log = logging.getLogger(__name__)

POOLED_PLAN, WITHIN_PLAN = "pooled", "within"
CHUNK_ROWS = 200_000


@dataclass(frozen=True)
class IndividualGConfig:
    plan: str = POOLED_PLAN
    m_profiles: int = 200
    exact_limit: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.plan not in (POOLED_PLAN, WITHIN_PLAN):
            raise ValueError(f"unknown marginalization plan {self.plan!r}")


@dataclass(eq=False)
class IndividualDensityModel:
    base: ConditionalDensityModel
    summary: SummarySpec
    plan: str
    profiles: np.ndarray  # (P, 2p + 1): [S1, S2, A]
    profile_weights: np.ndarray  # (P,), sums to one
    exact: bool
    warnings: list = field(default_factory=list)

    @property
    def grid(self):
        return self.base.grid

    def _contexts(self, e, w_i, alpha_i, n, prof):
        p = w_i.size
        s1, s2, amass = prof[:, :p], prof[:, p:2 * p], prof[:, 2 * p]
        tot = alpha_i + amass
        tot = np.where(tot > 0, tot, 1.0)
        m1 = (alpha_i * w_i[None, :] + s1) / tot[:, None]
        m2 = (alpha_i * w_i[None, :] ** 2 + s2) / tot[:, None]
        E = np.repeat(np.asarray(e, dtype=float)[None, :], prof.shape[0], axis=0)
        return context_from_moments(E, m1, m2, np.full(prof.shape[0], float(n)), self.summary)

    def masses_at(self, e, w_i, alpha_i: float, n: float, profiles=None, weights=None) -> np.ndarray:
        """Marginalized bin masses at one individual context (shape ``(K,)``)."""
        prof = self.profiles if profiles is None else profiles
        wts = self.profile_weights if weights is None else weights
        m = self.base.masses(self._contexts(e, np.asarray(w_i, dtype=float), float(alpha_i), n, prof))
        return wts @ m

    def masses(self, ds: HierarchicalDataset) -> np.ndarray:
        """Marginalized masses for every individual of ``ds`` (shape ``(n_individuals, K)``)."""
        if self.plan == WITHIN_PLAN:
            return self.base.masses(community_context(ds, self.summary))[ds.group]
        P = self.profiles.shape[0]
        out = np.empty((ds.n_individuals, self.base.K))
        per_chunk = max(1, CHUNK_ROWS // P)
        p = ds.p
        for start in range(0, ds.n_individuals, per_chunk):
            idx = np.arange(start, min(start + per_chunk, ds.n_individuals))
            rows = []
            for i in idx:
                j = ds.group[i]
                rows.append(self._contexts(ds.e[j], ds.w[i] if p else np.zeros(0), ds.alpha[i], ds.sizes[j],
                                           self.profiles))
            m = self.base.masses(np.vstack(rows)).reshape(idx.size, P, -1)
            out[idx] = np.einsum("p,ipk->ik", self.profile_weights, m)
        return out

    def density(self, a, ds: HierarchicalDataset, masses=None) -> np.ndarray:
        m = self.masses(ds) if masses is None else masses
        a = np.broadcast_to(np.asarray(a, dtype=float), (m.shape[0],))
        return self.base.density(a, None, masses=m)


def _profile_table(ds: HierarchicalDataset) -> np.ndarray:
    """Moment sums of ``W_{j,-i}`` for every individual (rows aligned with ds.w)."""
    w = ds.w
    a = ds.alpha
    s1 = np.zeros((ds.J, ds.p))
    s2 = np.zeros((ds.J, ds.p))
    for k in range(ds.p):
        s1[:, k] = np.bincount(ds.group, weights=a * w[:, k], minlength=ds.J)
        s2[:, k] = np.bincount(ds.group, weights=a * w[:, k] ** 2, minlength=ds.J)
    own1 = a[:, None] * w
    own2 = a[:, None] * w ** 2
    rest = 1.0 - a
    return np.hstack([s1[ds.group] - own1, s2[ds.group] - own2, rest[:, None]])


def marginalization_profiles(ds: HierarchicalDataset, cfg: IndividualGConfig) -> tuple[np.ndarray, np.ndarray, bool]:
    table = _profile_table(ds)
    exact = ds.n_individuals ** 2 <= cfg.exact_limit
    if not exact:
        rng = np.random.default_rng(cfg.seed)
        table = table[rng.choice(table.shape[0], size=cfg.m_profiles, replace=True)]
    uniq, counts = np.unique(table, axis=0, return_counts=True)
    return uniq, counts / counts.sum(), exact


def fit_individual_density(ds: HierarchicalDataset, density_cfg: DensityConfig = DensityConfig(),
                           cfg: IndividualGConfig = IndividualGConfig(), summary: SummarySpec = SummarySpec(),
                           base: ConditionalDensityModel | None = None) -> IndividualDensityModel:
    """Fit ĝ on community contexts (unless ``base`` is given) and set up its marginalization."""
    warnings = []
    if not ds.constant_size:
        msg = "community sizes vary; the individual-level parameter assumes a constant N"
        log.warning(msg)
        warnings.append(msg)
    if base is None:
        base = fit_density(ds.a, community_context(ds, summary), density_cfg)
    if cfg.plan == WITHIN_PLAN:
        return IndividualDensityModel(base, summary, WITHIN_PLAN, np.zeros((0, 2 * ds.p + 1)), np.zeros(0),
                                      True, warnings)
    prof, wts, exact = marginalization_profiles(ds, cfg)
    return IndividualDensityModel(base, summary, POOLED_PLAN, prof, wts, exact, warnings)


def individual_clever_covariate(model: IndividualDensityModel, spec: InterventionSpec, a, ds: HierarchicalDataset,
                                ratio_cap: float = 50.0, masses=None, floor=None) -> np.ndarray:
    """g*_I / ĝ_I at exposure(s) ``a`` for every individual, capped at ``ratio_cap``."""
    from .tmle import ratio_with_cap

    m = model.masses(ds) if masses is None else masses
    X = community_context(ds, model.summary)[ds.group]
    a_ind = np.broadcast_to(np.asarray(a, dtype=float), (m.shape[0],))
    gs = build_gstar(spec, model.grid, X, m, floor=floor)
    H, _ = ratio_with_cap(gs.density(a_ind), model.base.density(a_ind, None, masses=m), ratio_cap)
    return H
