"""Fixed-dimension feature rows built from hierarchical data.

The covariate matrix ``W_j`` of a community has ``N_j`` rows, so regressions
that condition on the whole community see it through summaries. Context rows
are laid out as ``[e, summaries of W, n]``; the individual-level layout
replaces the summaries with the individual's own ``w_i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import HierarchicalDataset


@dataclass(frozen=True)
class SummarySpec:
    stats: tuple[str, ...] = ("mean",)
    include_n: bool = True

    def __post_init__(self):
        bad = set(self.stats) - {"mean", "sd"}
        if bad:
            raise ValueError(f"unsupported W summaries: {sorted(bad)}")


def context_from_moments(e, m1, m2, n, spec: SummarySpec) -> np.ndarray:
    """Assemble context rows from α-weighted first/second moments of W."""
    e = np.atleast_2d(e)
    cols = [e]
    for stat in spec.stats:
        if stat == "mean":
            cols.append(m1)
        else:
            cols.append(np.sqrt(np.maximum(m2 - m1 ** 2, 0.0)))
    if spec.include_n:
        cols.append(np.asarray(n, dtype=float).reshape(-1, 1))
    return np.hstack(cols)


def community_context(ds: HierarchicalDataset, spec: SummarySpec = SummarySpec()) -> np.ndarray:
    m1 = ds.w_mean()
    m2 = np.zeros_like(m1)
    if "sd" in spec.stats and ds.p:
        for k in range(ds.p):
            m2[:, k] = np.bincount(ds.group, weights=ds.alpha * ds.w[:, k] ** 2, minlength=ds.J)
    return context_from_moments(ds.e, m1, m2, ds.sizes, spec)


def neighbor_means(ds: HierarchicalDataset, neighbors: dict[int, list[int]]) -> np.ndarray:
    """α-weighted mean of ``W_l`` over each individual's neighbor set.

    ``neighbors`` maps a global individual index to indices (global) of the
    individuals whose covariates affect it; individuals without an entry use
    only themselves.
    """
    out = np.array(ds.w, dtype=float, copy=True)
    for i, nb in neighbors.items():
        nb = np.asarray(sorted(set(nb) | {i}), dtype=int)
        if np.any(ds.group[nb] != ds.group[i]):
            raise ValueError(f"neighbor set of individual {i} crosses communities")
        wts = ds.alpha[nb]
        out[i] = (wts @ ds.w[nb]) / wts.sum() if wts.sum() > 0 else ds.w[nb].mean(axis=0)
    return out


def individual_context(ds: HierarchicalDataset, include_n: bool = True, extra_w=None) -> np.ndarray:
    cols = [ds.e[ds.group], ds.w]
    if extra_w is not None:
        cols.append(extra_w)
    if include_n:
        cols.append(ds.sizes[ds.group].astype(float).reshape(-1, 1))
    return np.hstack(cols)
