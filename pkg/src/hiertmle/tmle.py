"""Targeting step and substitution estimator.

Two fluctuation submodels are supported, both through the initial fit on
the logit scale:

``clever_covariate``    logit Q(eps) = logit Q + eps * H, unweighted;
``weighted_intercept``  logit Q(eps) = logit Q + eps, row weights H.

Either way the fitted ``eps`` solves ``sum w H (Y - Q*) = 0`` (``w`` = 1 at
the community level, ``alpha_ji`` at the individual level), so one update
suffices. The estimate integrates the targeted fit against g* and averages
over the empirical distribution of ``(E, W)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit, logit

from .data import HierarchicalDataset
from .density import ConditionalDensityModel
from .errors import AllWeightsZero, ConfigError, EstimationError
from .features import SummarySpec, community_context
from .interventions import GStarBatch, InterventionSpec, build_gstar
from .learners import bound
from .outcome import COMMUNITY, POOLED, OutcomeModel

log = logging.getLogger(__name__)

CLEVER, WEIGHTED = "clever_covariate", "weighted_intercept"
LEVEL_COMMUNITY, LEVEL_INDIVIDUAL = "community", "individual"
BINSUM, MONTECARLO = "binsum", "montecarlo"
EPS_LIMIT = 1e4


@dataclass(frozen=True)
class TargetingConfig:
    variant: str = CLEVER
    level: str = LEVEL_COMMUNITY
    integration: str = BINSUM
    ratio_cap: float = 50.0
    m_draws: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.variant not in (CLEVER, WEIGHTED):
            raise ConfigError(f"unknown targeting variant {self.variant!r}")
        if self.level not in (LEVEL_COMMUNITY, LEVEL_INDIVIDUAL):
            raise ConfigError(f"unknown targeting level {self.level!r}")
        if self.integration not in (BINSUM, MONTECARLO):
            raise ConfigError(f"unknown integration {self.integration!r}")
        if self.integration == MONTECARLO and self.m_draws < 100:
            raise ConfigError("Monte Carlo integration needs m_draws >= 100")
        if not self.ratio_cap > 1:
            raise ConfigError("ratio_cap must exceed 1")


def ratio_with_cap(num, den, cap: float) -> tuple[np.ndarray, dict]:
    """``min(num / den, cap)``; ``den == 0 < num`` gives ``cap`` and is counted."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    pos = den > 0
    raw = np.where(pos, num / np.where(pos, den, 1.0), 0.0)
    zero = (~pos) & (num > 0)
    raw = np.where(zero, np.inf, raw)
    truncated = raw > cap
    return np.minimum(raw, cap), {"n_truncated": int(truncated.sum()), "n_zero_density": int(zero.sum())}


def clever_covariate(g_hat: ConditionalDensityModel, gstar: InterventionSpec | GStarBatch, a, context,
                     ratio_cap: float = 50.0, floor=None) -> np.ndarray:
    """H = g*(a | x) / ĝ(a | x), truncated at ``ratio_cap``."""
    X = np.atleast_2d(np.asarray(context, dtype=float))
    masses = g_hat.masses(X)
    gs = gstar if isinstance(gstar, GStarBatch) else build_gstar(gstar, g_hat.grid, X, masses, floor=floor)
    a = np.broadcast_to(np.asarray(a, dtype=float), (X.shape[0],))
    H, _ = ratio_with_cap(gs.density(a), g_hat.density(a, X, masses), ratio_cap)
    return H


# -- epsilon -------------------------------------------------------------------

def _score(eps, y, off, h, w):
    return float(np.sum(w * h * (y - expit(off + eps * h))))


def fit_epsilon(y, offset, h, w) -> tuple[float, float, bool]:
    """Root of the fluctuation score, by Newton steps kept inside a sign bracket.

    Returns ``(eps, score_at_eps, solved)``.
    """
    y, off, h, w = (np.asarray(v, dtype=float) for v in (y, offset, h, w))
    active = (w * h) != 0
    if not np.any(active):
        raise AllWeightsZero("every clever-covariate weight is zero; the intervention has no support in the data")
    y, off, h, w = y[active], off[active], h[active], w[active]
    scale = float(np.sum(np.abs(w * h))) + 1e-300
    tol = 1e-14 * scale
    s0 = _score(0.0, y, off, h, w)
    if abs(s0) <= tol:
        return 0.0, s0, True
    # bracket: score is nonincreasing in eps
    lo, hi = -1.0, 1.0
    while _score(hi, y, off, h, w) > 0 and hi < EPS_LIMIT:
        lo, hi = hi, hi * 2.0
    while _score(lo, y, off, h, w) < 0 and lo > -EPS_LIMIT:
        lo, hi = lo * 2.0, lo
    s_lo, s_hi = _score(lo, y, off, h, w), _score(hi, y, off, h, w)
    if s_lo < 0 or s_hi > 0:
        res = minimize_scalar(fluctuation_loss, bounds=(-10.0, 10.0), method="bounded", args=(y, off, h, w),
                              options={"xatol": 1e-10})
        eps = float(res.x)
        s = _score(eps, y, off, h, w)
        log.warning("fluctuation score has no root within |eps| <= %g; loss minimizer on [-10, 10] used "
                    "(score %.3g)", EPS_LIMIT, s)
        return eps, s, False
    eps = 0.0 if lo <= 0.0 <= hi else 0.5 * (lo + hi)
    s = _score(eps, y, off, h, w)
    for _ in range(200):
        if abs(s) <= tol:
            break
        if s > 0:
            lo = eps
        else:
            hi = eps
        mu = expit(off + eps * h)
        deriv = -float(np.sum(w * h * h * mu * (1.0 - mu)))
        new = eps - s / deriv if deriv < 0 else 0.5 * (lo + hi)
        if not (lo < new < hi):
            new = 0.5 * (lo + hi)
        if new == eps or hi - lo <= 1e-15 * (1.0 + abs(eps)):
            eps = new
            s = _score(eps, y, off, h, w)
            break
        eps = new
        s = _score(eps, y, off, h, w)
    return float(eps), s, abs(s) <= 1e-9 * scale


def fluctuation_loss(eps, y, off, h, w) -> float:
    q = expit(off + eps * h)
    q = np.clip(q, 1e-300, 1 - 1e-16)
    return float(-np.sum(w * (y * np.log(q) + (1 - y) * np.log1p(-q))))


# -- problem assembly ----------------------------------------------------------

@dataclass(eq=False)
class TargetingInputs:
    """Everything the targeting step and the plug-in need, at one level.

    Rows are communities (community level) or individuals (individual level).
    ``group`` maps rows to communities, which aggregate with ``row_weight``.
    """

    level: str
    y: np.ndarray
    row_weight: np.ndarray
    group: np.ndarray
    J: int
    q_obs: np.ndarray
    h_obs: np.ndarray
    nodes: np.ndarray
    node_weights: np.ndarray
    q_nodes: np.ndarray
    h_nodes: np.ndarray
    truncation: dict
    mc: bool = False


@dataclass(eq=False)
class TargetedFit:
    epsilon: float
    variant: str
    inputs: TargetingInputs
    q_star_obs: np.ndarray
    q_star_nodes: np.ndarray
    score: float
    solved: bool
    loss_initial: float
    loss_targeted: float

    @property
    def level(self) -> str:
        return self.inputs.level

    @property
    def H(self) -> np.ndarray:
        return self.inputs.h_obs

    def d_y_rows(self) -> np.ndarray:
        return self.inputs.h_obs * (self.inputs.y - self.q_star_obs)

    def integrals(self) -> np.ndarray:
        """Per-row ``sum_m g*_m Q*(a_m)``."""
        return np.sum(self.inputs.node_weights * self.q_star_nodes, axis=1)

    def community_sum(self, v) -> np.ndarray:
        inp = self.inputs
        if inp.level == LEVEL_COMMUNITY:
            return np.asarray(v, dtype=float)
        return np.bincount(inp.group, weights=inp.row_weight * v, minlength=inp.J)


def _gstar_node_ratios(gs: GStarBatch, g_density_fn, nodes, cap) -> tuple[np.ndarray, dict]:
    H = np.empty_like(nodes)
    counts = {"n_truncated": 0, "n_zero_density": 0}
    for m in range(nodes.shape[1]):
        H[:, m], c = ratio_with_cap(gs.density(nodes[:, m]), g_density_fn(nodes[:, m]), cap)
        for key in counts:
            counts[key] += c[key]
    return H, counts


def _mc_nodes(gs: GStarBatch, cfg: TargetingConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    nodes = gs.sample(rng, cfg.m_draws)
    return nodes, np.full_like(nodes, 1.0 / cfg.m_draws)


def community_inputs(ds: HierarchicalDataset, spec: InterventionSpec, g_hat: ConditionalDensityModel,
                     outcome: OutcomeModel, cfg: TargetingConfig, summary: SummarySpec = SummarySpec(),
                     floor=None) -> tuple[TargetingInputs, GStarBatch]:
    X = community_context(ds, summary)
    masses = g_hat.masses(X)
    f = float(ds.a.min()) if floor is None else floor
    gs = build_gstar(spec, g_hat.grid, X, masses, floor=f)
    h_obs, trunc = ratio_with_cap(gs.density(ds.a), g_hat.density(ds.a, X, masses), cfg.ratio_cap)
    if cfg.integration == MONTECARLO:
        nodes, wts = _mc_nodes(gs, cfg)
    else:
        nodes, wts = gs.nodes, gs.weights
    q_obs = outcome.predict_community(ds, ds.a)
    q_nodes = community_node_predictions(outcome, ds, nodes)
    h_nodes, _ = _gstar_node_ratios(gs, lambda a: g_hat.density(a, X, masses), nodes, cfg.ratio_cap)
    inp = TargetingInputs(LEVEL_COMMUNITY, ds.y_community, np.ones(ds.J), np.arange(ds.J), ds.J,
                          q_obs, h_obs, nodes, wts, q_nodes, h_nodes, trunc, cfg.integration == MONTECARLO)
    return inp, gs


def community_node_predictions(outcome: OutcomeModel, ds: HierarchicalDataset, nodes) -> np.ndarray:
    """Qbar^c(a, E_j, W_j) at each community's integration nodes (shape ``(J, M)``)."""
    F = outcome.features(ds)
    if outcome.level == COMMUNITY:
        return outcome.predict_nodes(nodes, F)
    q_ind = outcome.predict_nodes(nodes[ds.group], F)
    out = np.empty(nodes.shape)
    for m in range(nodes.shape[1]):
        out[:, m] = np.bincount(ds.group, weights=ds.alpha * q_ind[:, m], minlength=ds.J)
    return bound(out)


def individual_inputs(ds: HierarchicalDataset, spec: InterventionSpec, g_ind, outcome: OutcomeModel,
                      cfg: TargetingConfig, floor=None, masses=None) -> tuple[TargetingInputs, GStarBatch]:
    if outcome.level != POOLED:
        raise ConfigError("the individual-level TMLE needs a pooled individual-level outcome model")
    m = g_ind.masses(ds) if masses is None else masses
    X = community_context(ds, g_ind.summary)[ds.group]
    f = float(ds.a.min()) if floor is None else floor
    gs = build_gstar(spec, g_ind.grid, X, m, floor=f)
    a_ind = ds.a[ds.group]
    base = g_ind.base
    h_obs, trunc = ratio_with_cap(gs.density(a_ind), base.density(a_ind, None, masses=m), cfg.ratio_cap)
    if cfg.integration == MONTECARLO:
        nodes, wts = _mc_nodes(gs, cfg)
    else:
        nodes, wts = gs.nodes, gs.weights
    F = outcome.features(ds)
    q_obs = outcome.predict(a_ind, F)
    q_nodes = outcome.predict_nodes(nodes, F)
    h_nodes, _ = _gstar_node_ratios(gs, lambda a: base.density(a, None, masses=m), nodes, cfg.ratio_cap)
    inp = TargetingInputs(LEVEL_INDIVIDUAL, ds.y_scaled, ds.alpha, ds.group, ds.J, q_obs, h_obs, nodes, wts,
                          q_nodes, h_nodes, trunc, cfg.integration == MONTECARLO)
    return inp, gs


def target(inputs: TargetingInputs, variant: str = CLEVER) -> TargetedFit:
    """Fit the fluctuation parameter and update the outcome predictions."""
    off = logit(bound(inputs.q_obs))
    off_nodes = logit(bound(inputs.q_nodes))
    if variant == CLEVER:
        h, w = inputs.h_obs, inputs.row_weight
    elif variant == WEIGHTED:
        h, w = np.ones_like(inputs.h_obs), inputs.row_weight * inputs.h_obs
    else:
        raise ConfigError(f"unknown targeting variant {variant!r}")
    eps, score, solved = fit_epsilon(inputs.y, off, h, w)
    if not solved:
        log.warning("targeting score not solved to tolerance (score %.3g)", score)
    if variant == CLEVER:
        q_star_obs = expit(off + eps * inputs.h_obs)
        q_star_nodes = expit(off_nodes + eps * inputs.h_nodes)
    else:
        q_star_obs = expit(off + eps)
        q_star_nodes = expit(off_nodes + eps)
    return TargetedFit(eps, variant, inputs, q_star_obs, q_star_nodes, score, solved,
                       fluctuation_loss(0.0, inputs.y, off, h, w), fluctuation_loss(eps, inputs.y, off, h, w))


def integrate_over_gstar(q_fn, gs: GStarBatch, integration: str = BINSUM, m_draws: int = 1000,
                         rng=None) -> tuple[np.ndarray, np.ndarray | None]:
    """``E_{g*}[Q(A*, x_j)]`` for every row; Monte Carlo also returns per-row standard errors.

    ``q_fn(nodes)`` maps an ``(n, M)`` array of exposures to predictions.
    """
    if integration == MONTECARLO:
        rng = np.random.default_rng(0) if rng is None else rng
        draws = gs.sample(rng, m_draws)
        q = q_fn(draws)
        return q.mean(axis=1), q.std(axis=1, ddof=1) / np.sqrt(m_draws)
    return np.sum(gs.weights * q_fn(gs.nodes), axis=1), None


def estimate_psi(fit: TargetedFit) -> float:
    """Plug-in estimate: mean over communities of the community integral."""
    per_comm = fit.community_sum(fit.integrals())
    return float(np.mean(per_comm))


def mc_standard_error(fit: TargetedFit) -> float | None:
    inp = fit.inputs
    if not inp.mc:
        return None
    M = inp.nodes.shape[1]
    var_rows = np.var(fit.q_star_nodes, axis=1, ddof=1) / M
    if inp.level == LEVEL_COMMUNITY:
        return float(np.sqrt(var_rows.sum()) / inp.J)
    v = np.bincount(inp.group, weights=inp.row_weight ** 2 * var_rows, minlength=inp.J)
    return float(np.sqrt(v.sum()) / inp.J)


def score_residual(fit: TargetedFit) -> float:
    """``sum_rows w H (Y - Q*)`` at the fitted epsilon (zero when targeting succeeded)."""
    return float(np.sum(fit.inputs.row_weight * fit.d_y_rows()))


def check_finite(fit: TargetedFit) -> None:
    if not np.isfinite(fit.epsilon) or not np.all(np.isfinite(fit.q_star_nodes)):
        raise EstimationError("targeted predictions are not finite")
