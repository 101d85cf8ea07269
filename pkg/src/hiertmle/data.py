"""Hierarchical observed data: communities of individuals sharing one exposure.

A dataset holds J communities. Community ``j`` carries community-level
covariates ``e``, a scalar exposure ``a``, and ``N_j`` individual rows
``(w_i, y_i)`` with aggregation weights ``alpha_i`` summing to one. The
community size ``N_j`` is always part of the environment; regression
layers append it as the last environment feature.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvariantError, OutcomeOutOfBounds, ParseError, SchemaError, WeightError

ALPHA_TOL = 1e-12


def check_bounds(bounds: Sequence[float]) -> tuple[float, float]:
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
        raise InvariantError(f"invalid outcome bounds {bounds!r}; need finite lo < hi")
    return lo, hi


@dataclass(frozen=True)
class IndividualRecord:
    w: tuple[float, ...]
    y: float

    def __post_init__(self):
        if not math.isfinite(self.y):
            raise InvariantError("individual outcome must be finite")


@dataclass(frozen=True)
class Community:
    id: str
    e: tuple[float, ...]
    a: float
    individuals: tuple[IndividualRecord, ...]
    alpha: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.individuals) == 0:
            raise InvariantError(f"community {self.id!r} has no individuals")
        if self.alpha is None:
            n = len(self.individuals)
            object.__setattr__(self, "alpha", tuple([1.0 / n] * n))
        _check_alpha(np.asarray(self.alpha, dtype=float), len(self.individuals), self.id)

    @property
    def n(self) -> int:
        return len(self.individuals)


def _check_alpha(alpha: np.ndarray, n: int, cid) -> None:
    if alpha.shape != (n,):
        raise WeightError(f"community {cid!r}: {alpha.size} weights for {n} individuals")
    if np.any(~np.isfinite(alpha)) or np.any(alpha < 0):
        raise WeightError(f"community {cid!r}: weights must be finite and nonnegative")
    if abs(alpha.sum() - 1.0) > ALPHA_TOL:
        raise WeightError(f"community {cid!r}: weights sum to {alpha.sum()!r}, not 1")


@dataclass(frozen=True)
class CommunityOutcome:
    y_c: float


def scale_outcome(y, bounds):
    lo, hi = check_bounds(bounds)
    return (np.asarray(y, dtype=float) - lo) / (hi - lo)


def community_outcome(c: Community, bounds: Sequence[float]) -> CommunityOutcome:
    """Weighted mean of the individual outcomes after mapping ``bounds`` onto [0, 1]."""
    lo, hi = check_bounds(bounds)
    y = np.array([r.y for r in c.individuals])
    if np.any(y < lo) or np.any(y > hi):
        raise OutcomeOutOfBounds(f"community {c.id!r} has outcomes outside [{lo}, {hi}]")
    alpha = np.asarray(c.alpha, dtype=float)
    _check_alpha(alpha, c.n, c.id)
    y_c = float(np.dot(alpha, (y - lo) / (hi - lo)))
    return CommunityOutcome(min(max(y_c, 0.0), 1.0))


def unscale_estimate(psi_scaled: float, se_scaled: float, bounds: Sequence[float]) -> tuple[float, float]:
    lo, hi = check_bounds(bounds)
    return lo + (hi - lo) * psi_scaled, (hi - lo) * se_scaled


def empirical_bounds(y) -> tuple[float, float]:
    y = np.asarray(y, dtype=float)
    lo, hi = float(y.min()), float(y.max())
    if lo == hi:
        hi = lo + 1.0
    return lo, hi


@dataclass(frozen=True, eq=False)
class HierarchicalDataset:
    """Flat-array storage of J communities.

    Individual-level arrays (``w``, ``y``, ``alpha``, ``group``) are stacked
    community by community; ``offsets[j]:offsets[j + 1]`` slices community j.
    """

    ids: tuple
    e: np.ndarray
    a: np.ndarray
    w: np.ndarray
    y: np.ndarray
    alpha: np.ndarray
    group: np.ndarray
    outcome_bounds: tuple[float, float]
    e_names: tuple[str, ...] = ()
    w_names: tuple[str, ...] = ()
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        e = np.atleast_2d(np.asarray(self.e, dtype=float))
        if e.shape[0] != len(self.ids) and e.size == 0:
            e = np.zeros((len(self.ids), 0))
        a = np.asarray(self.a, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        w = np.asarray(self.w, dtype=float)
        if w.ndim == 1:
            w = w.reshape(y.size, -1)
        group = np.asarray(self.group, dtype=np.int64).reshape(-1)
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        J = len(self.ids)
        if J < 2:
            raise InvariantError(f"need at least 2 communities, got {J}")
        if e.shape[0] != J or a.shape[0] != J:
            raise InvariantError("environment/exposure arrays must have one row per community")
        if not (w.shape[0] == y.size == group.size == alpha.size):
            raise InvariantError("individual arrays have inconsistent lengths")
        if np.any(np.diff(group) < 0):
            raise InvariantError("individual rows must be stored grouped by community")
        counts = np.bincount(group, minlength=J)
        if counts.size != J or np.any(counts == 0):
            raise InvariantError("every community needs at least one individual")
        for arr, name in ((e, "e"), (a, "a"), (w, "w"), (y, "y")):
            if not np.all(np.isfinite(arr)):
                raise InvariantError(f"non-finite values in {name}")
        if np.any(alpha < 0):
            raise WeightError("weights must be nonnegative")
        sums = np.bincount(group, weights=alpha, minlength=J)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ALPHA_TOL)
        if bad.size:
            raise WeightError(f"community {self.ids[bad[0]]!r}: weights sum to {sums[bad[0]]!r}")
        lo, hi = check_bounds(self.outcome_bounds)
        if np.any(y < lo) or np.any(y > hi):
            raise OutcomeOutOfBounds(f"outcomes fall outside bounds [{lo}, {hi}]")
        offsets = np.concatenate([[0], np.cumsum(counts)])
        for name, val in (("e", e), ("a", a), ("w", w), ("y", y), ("group", group), ("alpha", alpha),
                          ("offsets", offsets), ("outcome_bounds", (lo, hi)), ("ids", tuple(self.ids))):
            object.__setattr__(self, name, val)
        for arr in (e, a, w, y, group, alpha, offsets):
            arr.setflags(write=False)

    # -- construction -----------------------------------------------------
    @classmethod
    def from_communities(cls, communities: Sequence[Community], outcome_bounds=None,
                         e_names=(), w_names=()) -> "HierarchicalDataset":
        if not communities:
            raise InvariantError("no communities")
        s = len(communities[0].e)
        p = len(communities[0].individuals[0].w)
        rows_w, rows_y, rows_alpha, group = [], [], [], []
        for j, c in enumerate(communities):
            if len(c.e) != s:
                raise InvariantError(f"community {c.id!r} has {len(c.e)} environment covariates, expected {s}")
            for r in c.individuals:
                if len(r.w) != p:
                    raise InvariantError(f"community {c.id!r} has an individual with {len(r.w)} covariates, expected {p}")
                rows_w.append(r.w)
                rows_y.append(r.y)
            rows_alpha.extend(c.alpha)
            group.extend([j] * c.n)
        y = np.asarray(rows_y, dtype=float)
        bounds = empirical_bounds(y) if outcome_bounds is None else outcome_bounds
        return cls(
            ids=tuple(c.id for c in communities),
            e=np.asarray([c.e for c in communities], dtype=float).reshape(len(communities), s),
            a=np.asarray([c.a for c in communities], dtype=float),
            w=np.asarray(rows_w, dtype=float).reshape(len(rows_y), p),
            y=y,
            alpha=np.asarray(rows_alpha, dtype=float),
            group=np.asarray(group),
            outcome_bounds=bounds,
            e_names=tuple(e_names),
            w_names=tuple(w_names),
        )

    # -- basic shape ------------------------------------------------------
    @property
    def J(self) -> int:
        return len(self.ids)

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def n_individuals(self) -> int:
        return int(self.y.size)

    @property
    def p(self) -> int:
        return int(self.w.shape[1])

    @property
    def s(self) -> int:
        return int(self.e.shape[1])

    @property
    def constant_size(self) -> bool:
        return bool(np.all(self.sizes == self.sizes[0]))

    @property
    def communities(self) -> list[Community]:
        out = []
        for j in range(self.J):
            lo, hi = self.offsets[j], self.offsets[j + 1]
            inds = tuple(IndividualRecord(tuple(map(float, self.w[i])), float(self.y[i])) for i in range(lo, hi))
            out.append(Community(self.ids[j], tuple(map(float, self.e[j])), float(self.a[j]), inds,
                                 tuple(map(float, self.alpha[lo:hi]))))
        return out

    # -- derived quantities -----------------------------------------------
    @property
    def y_scaled(self) -> np.ndarray:
        return scale_outcome(self.y, self.outcome_bounds)

    @property
    def y_community(self) -> np.ndarray:
        """Community outcomes on the [0, 1] scale."""
        yc = np.bincount(self.group, weights=self.alpha * self.y_scaled, minlength=self.J)
        return np.clip(yc, 0.0, 1.0)

    def w_mean(self) -> np.ndarray:
        if self.p == 0:
            return np.zeros((self.J, 0))
        out = np.zeros((self.J, self.p))
        for k in range(self.p):
            out[:, k] = np.bincount(self.group, weights=self.alpha * self.w[:, k], minlength=self.J)
        return out

    def w_sd(self) -> np.ndarray:
        if self.p == 0:
            return np.zeros((self.J, 0))
        m = self.w_mean()
        out = np.zeros((self.J, self.p))
        for k in range(self.p):
            m2 = np.bincount(self.group, weights=self.alpha * self.w[:, k] ** 2, minlength=self.J)
            out[:, k] = np.sqrt(np.maximum(m2 - m[:, k] ** 2, 0.0))
        return out

    def with_bounds(self, bounds) -> "HierarchicalDataset":
        return HierarchicalDataset(self.ids, self.e, self.a, self.w, self.y, self.alpha, self.group,
                                   tuple(bounds), self.e_names, self.w_names)

    def with_outcomes(self, y, bounds=None) -> "HierarchicalDataset":
        return HierarchicalDataset(self.ids, self.e, self.a, self.w, y, self.alpha, self.group,
                                   self.outcome_bounds if bounds is None else tuple(bounds),
                                   self.e_names, self.w_names)

    def collapse_to_environment(self) -> "HierarchicalDataset":
        """For one-individual communities, move W into E (the N = 1 special case)."""
        if not np.all(self.sizes == 1):
            raise InvariantError("collapse_to_environment requires N_j = 1 for every community")
        return HierarchicalDataset(self.ids, np.hstack([self.e, self.w]), self.a, np.zeros((self.J, 0)),
                                   self.y, self.alpha, self.group, self.outcome_bounds,
                                   self.e_names + self.w_names, ())

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.e, self.a, self.w, self.y, self.alpha, self.group):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr(self.outcome_bounds).encode())
        return h.hexdigest()[:16]


# -- CSV I/O ---------------------------------------------------------------

def _columns(header: list[str], schema: dict) -> tuple[list[str], list[str]]:
    e_cols = schema.get("e_columns")
    w_cols = schema.get("w_columns")
    if e_cols is None:
        e_cols = [h for h in header if h.startswith("e_")]
    if w_cols is None:
        w_cols = [h for h in header if h.startswith("w_")]
    missing = [c for c in ["community_id", "a", "y", *e_cols, *w_cols] if c not in header]
    if missing:
        raise SchemaError(f"missing columns: {', '.join(missing)}")
    return list(e_cols), list(w_cols)


def load_dataset(path, schema: dict | None = None) -> HierarchicalDataset:
    """Read the one-row-per-individual CSV layout.

    Columns: ``community_id, a, e_1..e_S, w_1..w_p, y[, alpha][, n]``. Rows of
    a community need not be contiguous; ``e`` and ``a`` must agree across them.
    When ``alpha`` is absent every individual gets ``1 / N_j``. An optional
    ``n`` column is checked against the number of rows.
    """
    schema = dict(schema or {})
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        e_cols, w_cols = _columns(header, schema)
        idx = {h: k for k, h in enumerate(header)}
        has_alpha = "alpha" in idx
        has_n = "n" in idx
        order: list[str] = []
        comm: dict[str, dict] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                cid = row[idx["community_id"]].strip()
                a = float(row[idx["a"]])
                e = tuple(float(row[idx[c]]) for c in e_cols)
                w = tuple(float(row[idx[c]]) for c in w_cols)
                y = float(row[idx["y"]])
                alpha = float(row[idx["alpha"]]) if has_alpha else None
                n_decl = float(row[idx["n"]]) if has_n else None
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if cid not in comm:
                order.append(cid)
                comm[cid] = {"a": a, "e": e, "rows": [], "alpha": [], "n": n_decl}
            c = comm[cid]
            if c["a"] != a or c["e"] != e:
                raise InvariantError(f"{path}:{lineno}: exposure/environment differ within community {cid!r}")
            if c["n"] != n_decl:
                raise InvariantError(f"{path}:{lineno}: declared n differs within community {cid!r}")
            c["rows"].append(IndividualRecord(w, y))
            c["alpha"].append(alpha)
    if not order:
        raise InvariantError(f"{path}: no data rows")
    communities = []
    for cid in order:
        c = comm[cid]
        if c["n"] is not None and int(c["n"]) != len(c["rows"]):
            raise InvariantError(f"community {cid!r}: declared n={c['n']:g} but {len(c['rows'])} rows")
        alpha = tuple(c["alpha"]) if has_alpha else None
        communities.append(Community(cid, c["e"], c["a"], tuple(c["rows"]), alpha))
    bounds = schema.get("outcome_bounds")
    return HierarchicalDataset.from_communities(communities, outcome_bounds=bounds,
                                                e_names=e_cols, w_names=w_cols)


def write_dataset(ds: HierarchicalDataset, path, include_alpha: bool = True) -> None:
    e_names = list(ds.e_names) or [f"e_{k + 1}" for k in range(ds.s)]
    w_names = list(ds.w_names) or [f"w_{k + 1}" for k in range(ds.p)]
    header = ["community_id", "a", *e_names, *w_names, "y"] + (["alpha"] if include_alpha else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(ds.n_individuals):
            j = ds.group[i]
            row = [ds.ids[j], repr(float(ds.a[j]))]
            row += [repr(float(v)) for v in ds.e[j]]
            row += [repr(float(v)) for v in ds.w[i]]
            row.append(repr(float(ds.y[i])))
            if include_alpha:
                row.append(repr(float(ds.alpha[i])))
            writer.writerow(row)


def iter_slices(ds: HierarchicalDataset) -> Iterable[slice]:
    for j in range(ds.J):
        yield slice(int(ds.offsets[j]), int(ds.offsets[j + 1]))
