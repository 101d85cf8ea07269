"""Stochastic interventions g*(a | e, W) as density evaluators and samplers.

Supported kinds:

``static``
    point mass at ``a_star``.
``shift``
    ``A* = A + nu(x)`` with ``A`` drawn from the reference density ĝ, i.e.
    ``g*(a | x) = ĝ(a - nu(x) | x)``.
``truncated_shift``
    ``A* = max(A - nu(x), floor)``; mass that would fall below the floor
    (default: smallest observed exposure) piles up at the floor.
``table``
    explicit atoms ``(a, prob)`` per stratum of one context column.

``nu(x) = nu + x[:, :k] @ nu_coef`` where ``x`` is the context row
``[e, W summaries, n]``.

For continuous exposures every g* is also represented by bin masses that
sum to one: shifts live on the shifted grid ``cutoffs + nu``, the other kinds
on the reference grid itself. Clever covariates use those masses, while
integration uses exact images of the reference bins (``nodes``/``weights``).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .density import BinGrid, ConditionalDensityModel, cdf_from_masses, sample_from_masses
from .errors import ConfigError, UnfittedReference, UnsupportedValue

KINDS = ("static", "shift", "truncated_shift", "table")
LEVEL_TOL = 1e-9


def stratum_key(v: float) -> str:
    return format(float(v), "g")


@dataclass(frozen=True)
class InterventionSpec:
    kind: str
    a_star: float | None = None
    nu: float = 0.0
    nu_coef: tuple[float, ...] = ()
    floor: float | None = None
    table: dict | None = None
    stratum_col: int | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown intervention kind {self.kind!r}")
        if self.kind == "static" and (self.a_star is None or not math.isfinite(self.a_star)):
            raise ConfigError("static intervention needs a finite a_star")
        if not math.isfinite(self.nu) or not all(math.isfinite(c) for c in self.nu_coef):
            raise ConfigError("shift amount must be finite")
        if self.kind == "truncated_shift" and (self.nu < 0 or self.nu_coef):
            raise ConfigError("truncated_shift needs a constant nonnegative nu")
        if self.kind == "table":
            if not self.table:
                raise ConfigError("table intervention needs a table")
            for key, atoms in self.table.items():
                probs = np.array([p for _, p in atoms], dtype=float)
                if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
                    raise ConfigError(f"table stratum {key!r}: probabilities must be >= 0 and sum to 1")
            if self.stratum_col is None and "*" not in self.table:
                raise ConfigError("table without stratum_col needs a '*' stratum")
        object.__setattr__(self, "nu_coef", tuple(float(c) for c in self.nu_coef))

    @property
    def needs_reference(self) -> bool:
        return self.kind in ("shift", "truncated_shift")

    @property
    def label(self) -> str:
        return self.name or self.kind

    def nu_values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], float(self.nu))
        if self.nu_coef:
            k = len(self.nu_coef)
            if X.shape[1] < k:
                raise ConfigError(f"nu uses {k} context columns but contexts have {X.shape[1]}")
            out = out + X[:, :k] @ np.asarray(self.nu_coef)
        return out

    def atoms_for(self, X) -> list[tuple[np.ndarray, np.ndarray]]:
        X = np.atleast_2d(X)
        out = []
        for row in X:
            key = "*" if self.stratum_col is None else stratum_key(row[self.stratum_col])
            atoms = self.table.get(key, self.table.get("*"))
            if atoms is None:
                raise UnsupportedValue(f"no table entry for stratum {key!r}")
            out.append((np.array([a for a, _ in atoms], dtype=float), np.array([p for _, p in atoms], dtype=float)))
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "name": self.label}
        if self.a_star is not None:
            d["a_star"] = self.a_star
        if self.kind in ("shift", "truncated_shift"):
            d["nu"] = self.nu
            if self.nu_coef:
                d["nu_coef"] = list(self.nu_coef)
        if self.floor is not None:
            d["floor"] = self.floor
        return d


def load_table(path, stratum_col=None) -> dict:
    """Read ``stratum_key, a, prob`` rows into ``{key: [(a, prob), ...]}``."""
    table: dict[str, list[tuple[float, float]]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"stratum_key", "a", "prob"} - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                key = row["stratum_key"].strip()
                if key != "*":
                    key = stratum_key(float(key))
                table.setdefault(key, []).append((float(row["a"]), float(row["prob"])))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return table


def _level_index(levels: np.ndarray, a: np.ndarray) -> np.ndarray:
    pos = np.clip(np.searchsorted(levels, a), 0, levels.size - 1)
    left = np.clip(pos - 1, 0, levels.size - 1)
    best = np.where(np.abs(levels[left] - a) < np.abs(levels[pos] - a), left, pos)
    hit = np.abs(levels[best] - a) <= LEVEL_TOL * (1.0 + np.abs(a))
    return np.where(hit, best, -1)


@dataclass(eq=False)
class GStarBatch:
    """g* evaluated for a batch of ``n`` contexts.

    ``nodes``/``weights`` (shape ``(n, M)``) give a discrete approximation used
    for integration; rows of ``weights`` sum to one. ``rep_cutoffs`` and
    ``rep_masses`` hold the binned representation (continuous exposures) or
    the pmf over ``nodes`` (discrete exposures).
    """

    spec: InterventionSpec
    grid: BinGrid
    nodes: np.ndarray
    weights: np.ndarray
    rep_cutoffs: np.ndarray | None
    rep_masses: np.ndarray
    nu: np.ndarray
    ref_masses: np.ndarray | None = None
    floor: float | None = None
    _atoms: list | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    def density(self, a) -> np.ndarray:
        """g*(a | x_j) for each row ``j``, in the same units as ĝ.density."""
        a = np.broadcast_to(np.asarray(a, dtype=float), (self.n,))
        rows = np.arange(self.n)
        if self.grid.discrete:
            hit = np.abs(self.nodes - a[:, None]) <= LEVEL_TOL * (1.0 + np.abs(a[:, None]))
            return (self.weights * hit).sum(axis=1)
        c = self.rep_cutoffs
        k = (c <= a[:, None]).sum(axis=1) - 1
        inside = (k >= 0) & (k < c.shape[1] - 1)
        kk = np.clip(k, 0, c.shape[1] - 2)
        bw = c[rows, kk + 1] - c[rows, kk]
        return np.where(inside, self.rep_masses[rows, kk] / bw, 0.0)

    def mass_sums(self) -> np.ndarray:
        return self.rep_masses.sum(axis=1)

    def sample(self, rng, m: int = 1) -> np.ndarray:
        """Draws of A* with shape ``(n, m)``."""
        out = np.empty((self.n, m))
        kind = self.spec.kind
        for r in range(m):
            if kind == "static":
                out[:, r] = self.spec.a_star
            elif kind == "table":
                cum = np.cumsum(self.weights, axis=1)
                u = rng.random(self.n)[:, None] * cum[:, -1:]
                k = np.minimum((cum < u).sum(axis=1), self.nodes.shape[1] - 1)
                out[:, r] = self.nodes[np.arange(self.n), k]
            else:
                base = sample_from_masses(self.grid, self.ref_masses, rng)
                if kind == "shift":
                    out[:, r] = base + self.nu
                else:
                    out[:, r] = np.maximum(base - self.nu, self.floor)
        return out


def build_gstar(spec: InterventionSpec, grid: BinGrid, X, ref_masses=None, floor=None) -> GStarBatch:
    """Materialize g* for context rows ``X`` given the reference bin masses."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if spec.needs_reference and ref_masses is None:
        raise UnfittedReference(f"{spec.kind} intervention needs a fitted reference density")
    m = None if ref_masses is None else np.asarray(ref_masses, dtype=float)
    nu = spec.nu_values(X)
    K = grid.K

    if spec.kind == "static":
        a_star = float(spec.a_star)
        k = int(grid.index(np.array([a_star]))[0]) if not grid.discrete else int(_level_index(grid.levels, np.array([a_star]))[0])
        if k < 0:
            raise UnsupportedValue(f"a_star={a_star} lies outside the exposure support")
        nodes = np.full((n, 1), a_star)
        weights = np.ones((n, 1))
        if grid.discrete:
            return GStarBatch(spec, grid, nodes, weights, None, weights.copy(), nu)
        rep = np.zeros((n, K))
        rep[:, k] = 1.0
        cuts = np.broadcast_to(grid.cutoffs, (n, K + 1)).copy()
        return GStarBatch(spec, grid, nodes, weights, cuts, rep, nu)

    if spec.kind == "table":
        atoms = spec.atoms_for(X)
        M = max(len(a) for a, _ in atoms)
        nodes = np.zeros((n, M))
        weights = np.zeros((n, M))
        for j, (av, pv) in enumerate(atoms):
            nodes[j, :av.size] = av
            nodes[j, av.size:] = av[0]
            weights[j, :pv.size] = pv
        if grid.discrete:
            return GStarBatch(spec, grid, nodes, weights, None, weights.copy(), nu, _atoms=atoms)
        rep = np.zeros((n, K))
        k = grid.index(nodes)
        if np.any((k < 0) & (weights > 0)):
            # atoms off the grid keep their mass in an extended edge bin
            k = np.clip(np.searchsorted(grid.cutoffs, nodes, side="right") - 1, 0, K - 1)
        np.add.at(rep, (np.repeat(np.arange(n), M), k.reshape(-1)), weights.reshape(-1))
        cuts = np.broadcast_to(grid.cutoffs, (n, K + 1)).copy()
        return GStarBatch(spec, grid, nodes, weights, cuts, rep, nu, _atoms=atoms)

    if spec.kind == "shift":
        if grid.discrete:
            nodes = grid.levels[None, :] + nu[:, None]
            return GStarBatch(spec, grid, nodes, m.copy(), None, m.copy(), nu, ref_masses=m)
        nodes = grid.mids[None, :] + nu[:, None]
        cuts = grid.cutoffs[None, :] + nu[:, None]
        return GStarBatch(spec, grid, nodes, m.copy(), cuts, m.copy(), nu, ref_masses=m)

    # truncated shift: A* = max(A - nu, floor)
    f = grid.lower if floor is None and spec.floor is None else float(spec.floor if spec.floor is not None else floor)
    if f < grid.lower:
        raise UnsupportedValue(f"floor {f} lies below the exposure support")
    if grid.discrete:
        nodes = np.maximum(grid.levels[None, :] - nu[:, None], f)
        return GStarBatch(spec, grid, nodes, m.copy(), None, m.copy(), nu, ref_masses=m, floor=f)
    c = grid.cutoffs
    lo = c[None, :-1] - nu[:, None]
    hi = c[None, 1:] - nu[:, None]
    below = np.clip((f - lo) / (hi - lo), 0.0, 1.0)
    atom = (m * below).sum(axis=1, keepdims=True)
    upper_lo = np.maximum(lo, f)
    nodes = np.hstack([np.full((n, 1), f), 0.5 * (upper_lo + hi)])
    weights = np.hstack([atom, m * (1.0 - below)])
    # binned representation on the reference grid: F*(x) = 1{x > f} Ĝ(x + nu)
    F = np.empty((n, K + 1))
    for t in range(K + 1):
        F[:, t] = np.where(c[t] > f, cdf_from_masses(grid, m, c[t] + nu), 0.0)
    F[:, -1] = 1.0
    rep = np.diff(F, axis=1)
    cuts = np.broadcast_to(c, (n, K + 1)).copy()
    return GStarBatch(spec, grid, nodes, weights, cuts, rep, nu, ref_masses=m, floor=f)


def gstar_for_model(spec: InterventionSpec, g_hat: ConditionalDensityModel | None, X, floor=None) -> GStarBatch:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if g_hat is None:
        if spec.needs_reference:
            raise UnfittedReference(f"{spec.kind} intervention needs a fitted reference density")
        raise UnfittedReference("a density model is required to define the exposure support")
    return build_gstar(spec, g_hat.grid, X, g_hat.masses(X), floor=floor)


def gstar_density(spec: InterventionSpec, g_hat: ConditionalDensityModel | None, a, context, floor=None):
    """g*(a | context) for one context row (scalar) or a batch of rows."""
    X = np.atleast_2d(np.asarray(context, dtype=float))
    if not np.all(np.isfinite(np.asarray(a, dtype=float))):
        raise UnsupportedValue("exposure value must be finite")
    out = gstar_for_model(spec, g_hat, X, floor).density(a)
    return float(out[0]) if out.size == 1 else out


def gstar_sample(spec: InterventionSpec, g_hat: ConditionalDensityModel | None, context, rng, size: int = 1,
                 floor=None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(context, dtype=float))
    return gstar_for_model(spec, g_hat, X, floor).sample(rng, size)


def shifted_points(spec: InterventionSpec, a, X, floor=None) -> list[np.ndarray]:
    """Where g* moves each observed exposure (one array of points per row)."""
    a = np.asarray(a, dtype=float)
    X = np.atleast_2d(X)
    if spec.kind == "static":
        return [np.array([spec.a_star])] * a.size
    if spec.kind == "shift":
        return list((a + spec.nu_values(X))[:, None])
    if spec.kind == "truncated_shift":
        f = spec.floor if spec.floor is not None else (floor if floor is not None else float(a.min()))
        return list(np.maximum(a - spec.nu_values(X), f)[:, None])
    return [av[pv > 0] for av, pv in spec.atoms_for(X)]


def positivity_diagnostic(spec: InterventionSpec, g_hat: ConditionalDensityModel, a, X,
                          ratio_cap: float = 50.0, min_density: float = 1e-4, floor=None) -> dict:
    """Distribution of g*/ĝ at the observed exposures, with flags.

    A row is flagged when its ratio exceeds ``ratio_cap`` or when ĝ is below
    ``min_density`` at a point where g* moves that row's exposure.
    """
    a = np.asarray(a, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    masses = g_hat.masses(X)
    gs = build_gstar(spec, g_hat.grid, X, masses, floor=floor)
    g = g_hat.density(a, X, masses)
    num = gs.density(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(g > 0, num / np.where(g > 0, g, 1.0), np.where(num > 0, np.inf, 0.0))
    pts = shifted_points(spec, a, X, floor=gs.floor if gs.floor is not None else floor)
    low = np.zeros(a.size, dtype=bool)
    for j, pj in enumerate(pts):
        dens = g_hat.density(pj, np.repeat(X[j:j + 1], pj.size, axis=0), np.repeat(masses[j:j + 1], pj.size, axis=0))
        low[j] = bool(np.any(dens < min_density))
    high = ratio > ratio_cap
    finite = ratio[np.isfinite(ratio)]
    q = np.quantile(finite, [0.5, 0.9, 0.99]) if finite.size else np.full(3, np.nan)
    return {
        "max_ratio": float(ratio.max()) if ratio.size else float("nan"),
        "quantiles": {"0.5": float(q[0]), "0.9": float(q[1]), "0.99": float(q[2])},
        "ratio_cap": float(ratio_cap),
        "n_ratio_flagged": int(high.sum()),
        "n_low_density": int(low.sum()),
        "n_zero_density": int(((g == 0) & (num > 0)).sum()),
        "n_flagged": int((high | low).sum()),
        "ratios": ratio,
    }
