"""Initial outcome regressions on the [0, 1] outcome scale.

``community`` level regresses ``Y^c_j`` on ``(A_j, context_j)``, one row per
community. ``pooled`` level regresses individual outcomes ``Y_ji`` on
``(A_j, E_j, W_ji, N_j)`` with row weights ``alpha_ji`` and recovers the
community mean as ``sum_i alpha_ji * Qbar(a, E_j, W_ji)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import HierarchicalDataset
from .errors import DimensionMismatch, InsufficientData, NonConvergence
from .features import SummarySpec, community_context, context_from_moments, individual_context, neighbor_means
from .learners import CANDIDATES, PRED_CLIP, bound, design, fit_least_squares, fit_logistic, fold_ids, xlogy_loss

log = logging.getLogger(__name__)

COMMUNITY, POOLED = "community", "pooled"
BERNOULLI, SQUARED = "bernoulli", "squared"
W_MODES = ("own", "summary", "none", "neighbors")


@dataclass(frozen=True)
class OutcomeConfig:
    level: str = POOLED
    loss: str = BERNOULLI
    candidates: tuple[str, ...] = CANDIDATES
    cv_folds: int = 5
    w_mode: str = "own"
    summary: SummarySpec = SummarySpec()
    neighbors: dict | None = None
    seed: int = 0

    def __post_init__(self):
        if self.level not in (COMMUNITY, POOLED):
            raise ValueError(f"unknown outcome level {self.level!r}")
        if self.loss not in (BERNOULLI, SQUARED):
            raise ValueError(f"unknown outcome loss {self.loss!r}")
        if self.w_mode not in W_MODES:
            raise ValueError(f"unknown w_mode {self.w_mode!r}")


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    level: str
    loss: str
    kind: str
    coef: np.ndarray
    w_mode: str = "own"
    summary: SummarySpec = SummarySpec()
    neighbors: dict | None = None
    cv_risk: dict = field(default_factory=dict)

    def _mean(self, a, F) -> np.ndarray:
        F = np.atleast_2d(np.asarray(F, dtype=float))
        a = np.broadcast_to(np.asarray(a, dtype=float), (F.shape[0],))
        D = design(self.kind, np.column_stack([a, F]))
        if D.shape[1] != self.coef.size:
            raise DimensionMismatch(f"design has {D.shape[1]} columns, model has {self.coef.size}")
        eta = D @ self.coef
        return bound(expit(eta) if self.loss == BERNOULLI else eta)

    def features(self, ds: HierarchicalDataset) -> np.ndarray:
        """Raw regression features (without the exposure) for each row of this level."""
        if self.level == COMMUNITY:
            return community_context(ds, self.summary)
        return pooled_features(ds, self.w_mode, self.summary, self.neighbors)

    def predict(self, a, F) -> np.ndarray:
        """Qbar at exposure(s) ``a`` for feature rows ``F`` of this model's level."""
        return self._mean(a, F)

    def predict_nodes(self, nodes, F) -> np.ndarray:
        """Predictions for every row of ``F`` at each column of ``nodes`` (same row count)."""
        nodes = np.asarray(nodes, dtype=float)
        n, M = nodes.shape
        flat = self._mean(nodes.reshape(-1), np.repeat(F, M, axis=0))
        return flat.reshape(n, M)

    def predict_community(self, ds: HierarchicalDataset, a) -> np.ndarray:
        """Community-level mean ``Qbar^c(a_j, E_j, W_j)`` for exposures ``a`` (length J)."""
        a = np.broadcast_to(np.asarray(a, dtype=float), (ds.J,))
        F = self.features(ds)
        if self.level == COMMUNITY:
            return self._mean(a, F)
        q = self._mean(a[ds.group], F)
        # re-clip: the weighted sum can drift past the bounds by rounding
        return bound(np.bincount(ds.group, weights=ds.alpha * q, minlength=ds.J))

    def to_dict(self) -> dict:
        return {"level": self.level, "loss": self.loss, "kind": self.kind, "coef": self.coef.tolist(),
                "w_mode": self.w_mode, "cv_risk": self.cv_risk}


def pooled_features(ds: HierarchicalDataset, w_mode="own", summary=SummarySpec(), neighbors=None) -> np.ndarray:
    if w_mode == "own":
        return individual_context(ds, summary.include_n)
    if w_mode == "neighbors":
        return individual_context(ds, summary.include_n, extra_w=neighbor_means(ds, neighbors or {}))
    if w_mode == "summary":
        return community_context(ds, summary)[ds.group]
    cols = [ds.e[ds.group]]
    if summary.include_n:
        cols.append(ds.sizes[ds.group].astype(float).reshape(-1, 1))
    return np.hstack(cols)


def load_neighbor_map(path, ds: HierarchicalDataset) -> dict[int, list[int]]:
    """JSON ``{community_id: [[local neighbor indices of individual 0], ...]}`` → global indices."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    pos = {cid: j for j, cid in enumerate(ds.ids)}
    out: dict[int, list[int]] = {}
    for cid, lists in raw.items():
        j = pos[str(cid)]
        base = int(ds.offsets[j])
        n = int(ds.sizes[j])
        if len(lists) != n:
            raise DimensionMismatch(f"neighbor map for {cid!r} has {len(lists)} entries, community has {n}")
        for i, nb in enumerate(lists):
            out[base + i] = [base + int(x) for x in nb]
    return out


def _fit_one(kind, loss, a, F, y, w):
    D = design(kind, np.column_stack([a, F]))
    if loss == BERNOULLI:
        return fit_logistic(D, y, weights=w).coef
    return fit_least_squares(D, y, weights=w)


def _risk(loss, y, p, w) -> float:
    if loss == BERNOULLI:
        return xlogy_loss(y, p, w)
    return float((w * (y - p) ** 2).sum())


def fit_initial_outcome(ds: HierarchicalDataset, cfg: OutcomeConfig = OutcomeConfig()) -> OutcomeModel:
    """Fit each candidate, choose by V-fold CV loss (folds over communities), refit on all data."""
    candidates = tuple(dict.fromkeys(cfg.candidates))
    if not candidates:
        raise ValueError("no outcome candidates")
    proto = OutcomeModel(cfg.level, cfg.loss, "intercept", np.zeros(1), cfg.w_mode, cfg.summary, cfg.neighbors)
    F = proto.features(ds)
    if cfg.level == COMMUNITY:
        a, y, w, unit = ds.a, ds.y_community, np.ones(ds.J), np.arange(ds.J)
    else:
        a, y, w, unit = ds.a[ds.group], ds.y_scaled, ds.alpha, ds.group
    risks: dict[str, float] = {}
    if len(candidates) > 1 and cfg.cv_folds > 1:
        if ds.J < cfg.cv_folds:
            raise InsufficientData(f"J={ds.J} communities for {cfg.cv_folds} folds")
        folds = fold_ids(ds.J, cfg.cv_folds, cfg.seed)[unit]
        for cand in candidates:
            total = 0.0
            for v in range(cfg.cv_folds):
                tr, te = folds != v, folds == v
                try:
                    coef = _fit_one(cand, cfg.loss, a[tr], F[tr], y[tr], w[tr])
                except NonConvergence:
                    total = np.inf
                    break
                m = OutcomeModel(cfg.level, cfg.loss, cand, coef)
                total += _risk(cfg.loss, y[te], m._mean(a[te], F[te]), w[te])
            risks[cand] = float(total / w.sum())
        best = min(candidates, key=lambda c: (risks[c], candidates.index(c)))
    else:
        best = candidates[0]
    try:
        coef = _fit_one(best, cfg.loss, a, F, y, w)
    except NonConvergence:
        log.warning("outcome fit %s did not converge; falling back to intercept-only", best)
        best = "intercept"
        coef = _fit_one(best, cfg.loss, a, F, y, w)
    log.info("outcome model: selected %s (risks %s)", best, risks)
    return OutcomeModel(cfg.level, cfg.loss, best, coef, cfg.w_mode, cfg.summary, cfg.neighbors,
                        {"selected": best, "risks": risks})


def predict_outcome(model: OutcomeModel, a, e, w, alpha=None, n=None) -> float:
    """Qbar for one community given its environment ``e`` and covariate matrix ``w``.

    Community-level models take the community's summaries; pooled models
    average per-individual predictions with weights ``alpha`` (default 1/N).
    """
    e = np.asarray(e, dtype=float).reshape(-1)
    w = np.atleast_2d(np.asarray(w, dtype=float))
    N = w.shape[0]
    alpha = np.full(N, 1.0 / N) if alpha is None else np.asarray(alpha, dtype=float)
    n = N if n is None else n
    if model.level == COMMUNITY:
        m1 = alpha @ w
        m2 = alpha @ w ** 2
        F = context_from_moments(e[None, :], m1[None, :], m2[None, :], [n], model.summary)
        return float(model._mean(a, F)[0])
    if model.w_mode == "own":
        cols = [np.repeat(e[None, :], N, axis=0), w]
    elif model.w_mode == "none":
        cols = [np.repeat(e[None, :], N, axis=0)]
    else:
        raise DimensionMismatch(f"predict_outcome does not support w_mode={model.w_mode!r}; use predict_community")
    if model.summary.include_n:
        cols.append(np.full((N, 1), float(n)))
    q = model._mean(a, np.hstack(cols))
    return float(bound(alpha @ q))


__all__ = ["OutcomeConfig", "OutcomeModel", "fit_initial_outcome", "predict_outcome", "pooled_features",
           "load_neighbor_map", "PRED_CLIP"]
