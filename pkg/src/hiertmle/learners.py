"""Weighted GLM fitting and discrete cross-validated model selection.

Both the exposure hazards and the outcome regression are built from the same
two primitives: a weighted logistic regression with offset fitted by Newton
(IRLS) iterations, accepting fractional responses in [0, 1] (quasi-binomial),
and weighted least squares.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit  # noqa: F401  (re-exported)

from .errors import NonConvergence

log = logging.getLogger(__name__)

PRED_CLIP = 1e-6


def bound(p, eps: float = PRED_CLIP):
    return np.clip(p, eps, 1.0 - eps)


def xlogy_loss(y, p, weights=None) -> float:
    """Weighted negative Bernoulli log-likelihood, valid for fractional ``y``."""
    p = bound(p)
    ll = y * np.log(p) + (1.0 - y) * np.log1p(-p)
    if weights is None:
        return float(-ll.sum())
    return float(-(weights * ll).sum())


@dataclass(frozen=True)
class LogisticFit:
    coef: np.ndarray
    converged: bool
    n_iter: int

    def linear_predictor(self, X, offset=None):
        eta = X @ self.coef
        return eta if offset is None else eta + offset

    def predict(self, X, offset=None):
        return expit(self.linear_predictor(X, offset))


def _standardize(X, w):
    """Center and scale non-constant columns with weights ``w``.

    Constant columns are left untouched, so an explicit intercept column keeps
    its meaning. Returns the transformed matrix plus the affine map needed to
    express coefficients on the original scale.
    """
    wsum = w.sum()
    mean = (w @ X) / wsum
    var = (w @ (X - mean) ** 2) / wsum
    sd = np.sqrt(var)
    const = sd < 1e-12 * (1.0 + np.abs(mean))
    has_icpt = bool(np.any(const & (np.abs(mean) > 0)))
    center = np.where(const | (not has_icpt), 0.0, mean)
    scale = np.where(const, 1.0, sd)
    return (X - center) / scale, center, scale


def _unstandardize(beta, center, scale, icpt_col):
    b = beta / scale
    if icpt_col is not None:
        b = b.copy()
        b[icpt_col] -= float(np.dot(center, b))
    return b


def fit_logistic(X, y, weights=None, offset=None, ridge: float = 0.0,
                 max_iter: int = 100, tol: float = 1e-12) -> LogisticFit:
    """Maximize the weighted (quasi-)Bernoulli likelihood of ``y`` on ``X``.

    ``X`` must already contain any intercept/indicator columns. ``ridge`` adds
    ``ridge * sum(weights) * |beta|^2 / 2`` on the standardized scale, which
    keeps coefficients finite under separation. Rank-deficient designs get the
    minimum-norm Newton direction.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if k == 0:
        return LogisticFit(np.zeros(0), True, 0)
    Xs, center, scale = _standardize(X, w)
    const = scale == 1.0
    icpt = np.flatnonzero(const & np.all(X == 1.0, axis=0))
    icpt_col = int(icpt[0]) if icpt.size else None
    lam = ridge * w.sum()
    beta = np.zeros(k)

    def objective(b):
        return xlogy_loss(y, expit(off + Xs @ b), w) + 0.5 * lam * float(b @ b)

    obj = objective(beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(off + Xs @ beta)
        grad = Xs.T @ (w * (y - mu)) - lam * beta
        hw = w * mu * (1.0 - mu)
        H = (Xs * hw[:, None]).T @ Xs + lam * np.eye(k)
        step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            new = objective(cand)
            if np.isfinite(new) and new <= obj + 1e-12 * (1.0 + abs(obj)):
                break
            t *= 0.5
            if t < 1e-10:
                cand, new = beta, obj
                break
        change = obj - new
        beta, obj = cand, new
        if np.max(np.abs(t * step)) < 1e-10 or change <= tol * (1.0 + abs(obj)):
            converged = True
            break
    if not np.all(np.isfinite(beta)):
        raise NonConvergence("logistic fit produced non-finite coefficients")
    return LogisticFit(_unstandardize(beta, center, scale, icpt_col), converged, it)


def fit_least_squares(X, y, weights=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if weights is None:
        return np.linalg.lstsq(X, y, rcond=None)[0]
    sw = np.sqrt(np.asarray(weights, dtype=float))
    return np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]


def fold_ids(n_units: int, folds: int, seed: int) -> np.ndarray:
    """Balanced random fold labels in ``0..folds-1`` for ``n_units`` units."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n_units) % folds
    rng.shuffle(labels)
    return labels


def design(kind: str, X: np.ndarray, intercept: bool = True) -> np.ndarray:
    """Expand raw features into an ``intercept`` / ``main`` / ``interactions`` design."""
    n = X.shape[0]
    cols = [np.ones((n, 1))] if intercept else []
    if kind == "intercept":
        pass
    elif kind in ("main", "interactions"):
        cols.append(X)
        if kind == "interactions" and X.shape[1] > 1:
            iu, ju = np.triu_indices(X.shape[1], k=1)
            cols.append(X[:, iu] * X[:, ju])
    else:
        raise ValueError(f"unknown design {kind!r}")
    return np.hstack(cols) if cols else np.zeros((n, 0))


CANDIDATES = ("intercept", "main", "interactions")
