"""Conditional exposure density via pooled discrete-hazard regressions.

The exposure support is cut into bins; for each observation the bins up to
and including the one containing its exposure form a long-format at-risk set
with event indicator ``B_k = 1{k = S(a)}``. A pooled logistic regression of
``B_k`` on bin indicators and covariates estimates the hazards ``lambda_k``,
and the bin probabilities follow by chaining

    mass_k = lambda_k * prod_{t<k} (1 - lambda_t).

Densities are ``mass_{S(a)} / bw_{S(a)}``. Discrete (binary/categorical)
exposures use one "bin" per level with unit bandwidth, so the same machinery
yields a sequential-logit model of the probability mass function.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DegenerateSupport, InsufficientData, NonConvergence
from .learners import CANDIDATES, fit_logistic, fold_ids

log = logging.getLogger(__name__)

EQUAL_WIDTH = "equal_width"
EQUAL_MASS = "equal_mass"
DENBY_MALLOWS = "denby_mallows"
STRATEGIES = (EQUAL_WIDTH, EQUAL_MASS, DENBY_MALLOWS)

BINARY, CATEGORICAL, CONTINUOUS = "binary", "categorical", "continuous"


@dataclass(frozen=True, eq=False)
class BinGrid:
    """Either continuous cutoffs ``delta_1 < ... < delta_{K+1}`` or discrete levels."""

    cutoffs: np.ndarray | None = None
    levels: np.ndarray | None = None
    strategy: str = EQUAL_WIDTH

    def __post_init__(self):
        if (self.cutoffs is None) == (self.levels is None):
            raise ValueError("give exactly one of cutoffs or levels")
        if self.cutoffs is not None:
            c = np.asarray(self.cutoffs, dtype=float)
            if c.size < 2 or np.any(np.diff(c) <= 0):
                raise ValueError("cutoffs must be strictly increasing with at least two values")
            object.__setattr__(self, "cutoffs", c)
        else:
            lv = np.asarray(self.levels, dtype=float)
            if lv.size < 1 or np.any(np.diff(lv) <= 0):
                raise ValueError("levels must be strictly increasing")
            object.__setattr__(self, "levels", lv)

    @property
    def discrete(self) -> bool:
        return self.levels is not None

    @property
    def K(self) -> int:
        return self.levels.size if self.discrete else self.cutoffs.size - 1

    @property
    def bandwidths(self) -> np.ndarray:
        return np.ones(self.K) if self.discrete else np.diff(self.cutoffs)

    @property
    def mids(self) -> np.ndarray:
        if self.discrete:
            return self.levels.copy()
        return 0.5 * (self.cutoffs[:-1] + self.cutoffs[1:])

    @property
    def lower(self) -> float:
        return float(self.levels[0] if self.discrete else self.cutoffs[0])

    def index(self, a) -> np.ndarray:
        """0-based bin index of each value; -1 when outside the support."""
        a = np.asarray(a, dtype=float)
        if self.discrete:
            pos = np.searchsorted(self.levels, a)
            pos_c = np.minimum(pos, self.K - 1)
            hit = self.levels[pos_c] == a
            return np.where(hit, pos_c, -1)
        k = np.searchsorted(self.cutoffs, a, side="right") - 1
        return np.where((k >= 0) & (k < self.K), k, -1)

    def to_dict(self) -> dict:
        if self.discrete:
            return {"levels": self.levels.tolist(), "strategy": "levels"}
        return {"cutoffs": self.cutoffs.tolist(), "strategy": self.strategy}


def _top(x: float) -> float:
    return float(np.nextafter(x, np.inf))


def make_grid(a_values, k: int, strategy: str = EQUAL_WIDTH) -> BinGrid:
    """Cut the range of ``a_values`` into (at most) ``k`` bins.

    ``equal_mass`` collapses tied quantiles, so fewer than ``k`` bins may be
    returned. ``denby_mallows`` places cutoffs at equal steps of the blended
    coordinate ``0.5 * (a - min) / range + 0.5 * F_n(a)``, halfway between
    equal-width and equal-mass binning.
    """
    a = np.asarray(a_values, dtype=float).reshape(-1)
    if a.size == 0:
        raise ValueError("a_values is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown bin strategy {strategy!r}")
    lo, hi = float(a.min()), float(a.max())
    if lo == hi:
        if k > 1:
            raise DegenerateSupport("all exposure values are equal; cannot form more than one bin")
        return BinGrid(cutoffs=np.array([lo, _top(hi)]), strategy=strategy)
    if strategy == EQUAL_WIDTH:
        cuts = lo + (hi - lo) * np.arange(k + 1) / k
    elif strategy == EQUAL_MASS:
        cuts = np.quantile(a, np.arange(k + 1) / k)
    else:
        u, counts = np.unique(a, return_counts=True)
        cum = np.cumsum(counts)
        ecdf = (cum - 0.5 * counts) / a.size
        ecdf = (ecdf - ecdf[0]) / (ecdf[-1] - ecdf[0])
        z = 0.5 * (u - lo) / (hi - lo) + 0.5 * ecdf
        cuts = np.interp(np.arange(k + 1) / k, z, u)
    cuts[0], cuts[-1] = lo, _top(hi)
    cuts = np.unique(cuts)
    return BinGrid(cutoffs=cuts, strategy=strategy)


def level_grid(a_values) -> BinGrid:
    return BinGrid(levels=np.unique(np.asarray(a_values, dtype=float)))


def default_k(n: int) -> int:
    return int(min(20, max(2, math.floor(n ** (1.0 / 3.0) + 1e-9))))


def infer_exposure_type(a) -> str:
    u = np.unique(np.asarray(a, dtype=float))
    if u.size <= 2 and np.all(np.isin(u, (0.0, 1.0))):
        return BINARY
    return CONTINUOUS


# -- long format -----------------------------------------------------------

def long_format(bins: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """At-risk rows for observations with 0-based bins ``bins``.

    Returns ``(obs, k, event)``: observation index, bin index and indicator,
    with ``S(a) = bins + 1`` rows per observation and exactly one event.
    """
    bins = np.asarray(bins, dtype=np.int64)
    if np.any(bins < 0) or np.any(bins >= K):
        raise ValueError("bin indices outside the grid")
    reps = bins + 1
    obs = np.repeat(np.arange(bins.size), reps)
    start = np.repeat(np.cumsum(reps) - reps, reps)
    k = np.arange(obs.size) - start
    event = (k == bins[obs]).astype(float)
    return obs, k, event


# -- hazard models -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HazardModel:
    """Pooled logistic hazards ``logit lambda_k(x) = b_k + x.gamma + x.Gamma_k``.

    Bin ``K-1`` (the last) has hazard one by construction and carries no
    parameters. ``kind`` is one of ``intercept`` (per-bin intercepts only),
    ``main`` or ``interactions``; ``fixed`` models hold constant masses.
    """

    kind: str
    K: int
    d: int
    bin_coef: np.ndarray
    cov_coef: np.ndarray = field(default_factory=lambda: np.zeros(0))
    inter_coef: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    clip: float = 1e-6

    def hazards(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        eta = np.broadcast_to(self.bin_coef, (n, self.K - 1)).copy()
        if self.kind in ("main", "interactions") and self.d:
            eta += (X @ self.cov_coef)[:, None]
        if self.kind == "interactions" and self.d:
            eta += X @ self.inter_coef.T
        lam = np.clip(expit(eta), self.clip, 1.0 - self.clip)
        return np.hstack([lam, np.ones((n, 1))])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "K": self.K, "bin_coef": self.bin_coef.tolist(),
                "cov_coef": self.cov_coef.tolist(), "inter_coef": np.asarray(self.inter_coef).tolist(),
                "clip": self.clip}


def masses_from_hazards(lam: np.ndarray) -> np.ndarray:
    surv = np.cumprod(1.0 - lam[:, :-1], axis=1)
    surv = np.hstack([np.ones((lam.shape[0], 1)), surv])
    return lam * surv


def hazards_from_masses(masses) -> np.ndarray:
    m = np.asarray(masses, dtype=float)
    surv = 1.0 - np.concatenate([[0.0], np.cumsum(m)[:-1]])
    lam = np.where(surv > 0, m / np.where(surv > 0, surv, 1.0), 0.0)
    lam[-1] = 1.0
    return lam


def _hazard_design(kind: str, k: np.ndarray, X: np.ndarray, K: int) -> np.ndarray:
    onehot = np.zeros((k.size, K - 1))
    onehot[np.arange(k.size), k] = 1.0
    cols = [onehot]
    if kind in ("main", "interactions") and X.shape[1]:
        cols.append(X)
    if kind == "interactions" and X.shape[1]:
        cols.append((onehot[:, :, None] * X[:, None, :]).reshape(k.size, -1))
    return np.hstack(cols)


def _fit_hazard(kind: str, bins: np.ndarray, X: np.ndarray, K: int, clip: float, ridge: float) -> HazardModel:
    d = X.shape[1]
    if K == 1:
        return HazardModel(kind, 1, d, np.zeros(0), np.zeros(d), np.zeros((0, d)), clip)
    obs, k, event = long_format(bins, K)
    keep = k < K - 1
    obs, k, event = obs[keep], k[keep], event[keep]
    if kind == "intercept" or d == 0:
        # saturated in the bin index: closed-form empirical hazards
        at_risk = np.bincount(k, minlength=K - 1).astype(float)
        events = np.bincount(k, weights=event, minlength=K - 1)
        lam = np.where(at_risk > 0, events / np.where(at_risk > 0, at_risk, 1.0), 0.0)
        lam = np.clip(lam, clip, 1.0 - clip)
        b = np.log(lam) - np.log1p(-lam)
        return HazardModel("intercept", K, d, b, np.zeros(d), np.zeros((K - 1, d)), clip)
    Xd = _hazard_design(kind, k, X[obs], K)
    try:
        fit = fit_logistic(Xd, event, ridge=ridge)
    except NonConvergence as exc:
        log.warning("hazard fit %s diverged (%s); using per-bin empirical hazards", kind, exc)
        return _fit_hazard("intercept", bins, X, K, clip, ridge)
    coef = fit.coef
    b = coef[:K - 1]
    gamma = coef[K - 1:K - 1 + d]
    inter = coef[K - 1 + d:].reshape(K - 1, d) if kind == "interactions" else np.zeros((K - 1, d))
    return HazardModel(kind, K, d, b, gamma, inter, clip)


@dataclass(frozen=True, eq=False)
class ConditionalDensityModel:
    grid: BinGrid
    hazard: HazardModel
    exposure_type: str = CONTINUOUS
    cv_risk: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.grid.K

    def masses(self, X) -> np.ndarray:
        """Bin probabilities, shape ``(n, K)``; each row sums to one."""
        return masses_from_hazards(self.hazard.hazards(X))

    def density(self, a, X, masses=None) -> np.ndarray:
        """ĝ(a | x) for each row; zero outside the grid."""
        m = self.masses(X) if masses is None else masses
        a = np.broadcast_to(np.asarray(a, dtype=float), (m.shape[0],))
        k = self.grid.index(a)
        inside = k >= 0
        out = np.zeros(m.shape[0])
        kk = np.where(inside, k, 0)
        out[inside] = (m[np.arange(m.shape[0]), kk] / self.grid.bandwidths[kk])[inside]
        return out

    def cdf(self, points, X=None, masses=None) -> np.ndarray:
        """P̂(A < point | x) under the piecewise-uniform (continuous) or pmf model."""
        m = self.masses(X) if masses is None else masses
        return cdf_from_masses(self.grid, m, points)

    def sample(self, X, rng, masses=None) -> np.ndarray:
        m = self.masses(X) if masses is None else masses
        return sample_from_masses(self.grid, m, rng)

    def to_dict(self) -> dict:
        return {"exposure_type": self.exposure_type, "grid": self.grid.to_dict(),
                "hazard": self.hazard.to_dict(), "cv_risk": self.cv_risk}

    @classmethod
    def fixed(cls, grid: BinGrid, masses, exposure_type: str | None = None) -> "ConditionalDensityModel":
        """A covariate-free model with the given bin probabilities."""
        m = np.asarray(masses, dtype=float)
        if m.size != grid.K or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
            raise ValueError("fixed masses must be a probability vector over the grid")
        lam = hazards_from_masses(m)[:-1]
        lam = np.clip(lam, 1e-300, 1.0 - 1e-16)
        b = np.log(lam) - np.log1p(-lam)
        hz = HazardModel("intercept", grid.K, 0, b, np.zeros(0), np.zeros((grid.K - 1, 0)), clip=0.0)
        etype = exposure_type or (BINARY if grid.discrete and grid.K <= 2 else
                                  CATEGORICAL if grid.discrete else CONTINUOUS)
        return cls(grid, hz, etype, {"fixed": True})


def cdf_from_masses(grid: BinGrid, m: np.ndarray, points) -> np.ndarray:
    n = m.shape[0]
    points = np.broadcast_to(np.asarray(points, dtype=float), (n,))
    cum = np.hstack([np.zeros((n, 1)), np.cumsum(m, axis=1)])
    if grid.discrete:
        k = np.searchsorted(grid.levels, points, side="left")
        return cum[np.arange(n), k]
    c = grid.cutoffs
    k = np.clip(np.searchsorted(c, points, side="right") - 1, 0, grid.K - 1)
    frac = np.clip((points - c[k]) / grid.bandwidths[k], 0.0, 1.0)
    out = cum[np.arange(n), k] + m[np.arange(n), k] * frac
    out = np.where(points <= c[0], 0.0, out)
    return np.where(points >= c[-1], 1.0, out)


def sample_from_masses(grid: BinGrid, m: np.ndarray, rng) -> np.ndarray:
    n = m.shape[0]
    u = rng.random(n)
    cum = np.cumsum(m, axis=1)
    k = np.minimum((cum < u[:, None] * cum[:, -1:]).sum(axis=1), grid.K - 1)
    if grid.discrete:
        return grid.levels[k]
    return grid.cutoffs[k] + rng.random(n) * grid.bandwidths[k]


# -- fitting -------------------------------------------------------------------

@dataclass(frozen=True)
class DensityConfig:
    k_bins: int | None = None
    strategy: str = EQUAL_WIDTH
    candidates: tuple[str, ...] = CANDIDATES
    cv_folds: int = 5
    hazard_clip: float = 1e-6
    ridge: float = 1e-6
    exposure_type: str | None = None
    seed: int = 0


def fit_hazards(bins, X, grid: BinGrid, candidates=CANDIDATES, cv_folds: int = 5,
                clip: float = 1e-6, ridge: float = 1e-6, seed: int = 0) -> tuple[HazardModel, dict]:
    """Select a hazard model by V-fold cross-validated log-loss, then refit on all rows.

    The held-out loss of an observation is ``-log mass_{S(a)}(x)``, which equals
    the sum of its long-format Bernoulli log-losses.
    """
    bins = np.asarray(bins, dtype=np.int64)
    X = np.asarray(X, dtype=float).reshape(bins.size, -1)
    K = grid.K
    candidates = tuple(dict.fromkeys(candidates))
    if not candidates:
        raise ValueError("no hazard candidates")
    if X.shape[1] == 0:
        # without covariates every candidate reduces to the intercept model
        candidates = ("intercept",)
    risks: dict[str, float] = {}
    if len(candidates) > 1 and cv_folds > 1:
        if bins.size < cv_folds:
            raise InsufficientData(f"{bins.size} observations for {cv_folds} folds")
        folds = fold_ids(bins.size, cv_folds, seed)
        for cand in candidates:
            total = 0.0
            for v in range(cv_folds):
                tr, te = folds != v, folds == v
                hz = _fit_hazard(cand, bins[tr], X[tr], K, clip, ridge)
                m = masses_from_hazards(hz.hazards(X[te]))
                total -= np.log(np.maximum(m[np.arange(te.sum()), bins[te]], 1e-300)).sum()
            risks[cand] = float(total / bins.size)
        best = min(candidates, key=lambda c: (risks[c], candidates.index(c)))
    else:
        best = candidates[0]
    return _fit_hazard(best, bins, X, K, clip, ridge), {"selected": best, "risks": risks}


def fit_density(a, X, cfg: DensityConfig = DensityConfig(), grid: BinGrid | None = None) -> ConditionalDensityModel:
    """Fit ĝ(a | x) for exposures ``a`` and context rows ``X``."""
    a = np.asarray(a, dtype=float).reshape(-1)
    X = np.asarray(X, dtype=float).reshape(a.size, -1)
    etype = cfg.exposure_type or infer_exposure_type(a)
    if grid is None:
        if etype in (BINARY, CATEGORICAL):
            grid = level_grid(a) if etype == CATEGORICAL else BinGrid(levels=np.array([0.0, 1.0]))
        else:
            k = cfg.k_bins or default_k(a.size)
            grid = make_grid(a, k, cfg.strategy)
    bins = grid.index(a)
    if np.any(bins < 0):
        raise ValueError("observed exposures fall outside the bin grid")
    hz, info = fit_hazards(bins, X, grid, cfg.candidates, cfg.cv_folds, cfg.hazard_clip, cfg.ridge, cfg.seed)
    log.info("exposure model: selected %s (risks %s)", info["selected"], info["risks"])
    return ConditionalDensityModel(grid, hz, etype, info)


def density_at(model: ConditionalDensityModel, a, context) -> float | np.ndarray:
    out = model.density(a, np.atleast_2d(context))
    return float(out[0]) if np.ndim(a) == 0 and np.atleast_2d(context).shape[0] == 1 else out
