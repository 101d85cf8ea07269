"""Structural data-generating processes for hierarchical data and a Monte Carlo oracle.

Per community the variables are drawn in time order E -> W -> A -> Y:

``E``  normal or uniform, dimension ``e_dim``;
``W``  ``w_intercept + w_on_e * E_1 + w_sd * (sqrt(rho) Z_j + sqrt(1 - rho) Z_ji)``;
``A``  logistic (binary), normal or Bernoulli(``a_p``) in ``(E, mean W_1)``;
``Y``  expit-Bernoulli or clipped linear in ``(A, E, W_i)``.

Two optional dependence knobs act on ``Y``: ``y_wbar`` (others' covariates,
the mean of ``W_1`` over the rest of the community) and ``y_peer`` (others'
outcomes, via a first-round outcome draw). ``u_a``/``u_y`` load an
unmeasured community factor on ``A`` and ``Y`` (confounding).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data import HierarchicalDataset
from .errors import SpecError
from .features import SummarySpec, context_from_moments
from .interventions import InterventionSpec

A_TYPES = ("logistic", "normal", "bernoulli")
Y_TYPES = ("bernoulli", "linear")
CHUNK_INDIVIDUALS = 2_000_000


@dataclass(frozen=True)
class DGPSpec:
    J: int = 200
    N: int = 30
    N_range: tuple[int, int] | None = None
    e_dim: int = 1
    e_dist: str = "normal"
    e_mean: float = 0.0
    e_sd: float = 1.0
    w_dim: int = 1
    w_intercept: float = 0.0
    w_on_e: float = 0.5
    w_sd: float = 1.0
    rho: float = 0.3
    a_type: str = "logistic"
    a_intercept: float = -0.2
    a_e: tuple[float, ...] = (0.5,)
    a_wbar: float = 0.8
    a_sd: float = 1.0
    a_p: float = 0.5
    y_type: str = "bernoulli"
    y_intercept: float = -1.0
    y_a: float = 1.0
    y_e: tuple[float, ...] = (0.5,)
    y_w: tuple[float, ...] = (0.7,)
    y_wbar: float = 0.0
    y_peer: float = 0.0
    y_sd: float = 0.1
    y_bounds: tuple[float, float] = (0.0, 1.0)
    u_a: float = 0.0
    u_y: float = 0.0
    seed: int = 0
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        for key in ("a_e", "y_e", "y_w", "y_bounds"):
            object.__setattr__(self, key, tuple(float(v) for v in getattr(self, key)))
        if self.N_range is not None:
            object.__setattr__(self, "N_range", tuple(int(v) for v in self.N_range))
        self.validate()

    def validate(self) -> None:
        if self.J < 2:
            raise SpecError("J must be at least 2")
        if self.N_range is None and self.N < 1:
            raise SpecError("N must be positive")
        if self.N_range is not None and not (1 <= self.N_range[0] <= self.N_range[1]):
            raise SpecError("N_range must satisfy 1 <= lo <= hi")
        if self.e_dim < 1 or self.w_dim < 1:
            raise SpecError("e_dim and w_dim must be positive")
        if self.e_dist not in ("normal", "uniform"):
            raise SpecError(f"unknown e_dist {self.e_dist!r}")
        if self.a_type not in A_TYPES:
            raise SpecError(f"unknown a_type {self.a_type!r}")
        if self.y_type not in Y_TYPES:
            raise SpecError(f"unknown y_type {self.y_type!r}")
        if not 0.0 <= self.rho < 1.0:
            raise SpecError("rho must lie in [0, 1)")
        if not 0.0 <= self.a_p <= 1.0:
            raise SpecError("a_p must lie in [0, 1]")
        if len(self.a_e) != self.e_dim or len(self.y_e) != self.e_dim:
            raise SpecError("a_e and y_e need one coefficient per E column")
        if len(self.y_w) != self.w_dim:
            raise SpecError("y_w needs one coefficient per W column")
        if not self.y_bounds[0] < self.y_bounds[1]:
            raise SpecError("y_bounds must be increasing")
        if self.y_peer and self.y_type != "bernoulli":
            raise SpecError("y_peer is only defined for Bernoulli outcomes")
        numbers = [v for v in asdict(self).values() if isinstance(v, float)]
        numbers += [*self.a_e, *self.y_e, *self.y_w, *self.y_bounds]
        if not all(math.isfinite(v) for v in numbers):
            raise SpecError("DGP coefficients must be finite")
        if self.e_sd < 0 or self.w_sd < 0 or self.a_sd < 0 or self.y_sd < 0:
            raise SpecError("scale parameters must be nonnegative")

    @property
    def outcome_bounds(self) -> tuple[float, float]:
        return (0.0, 1.0) if self.y_type == "bernoulli" else self.y_bounds

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


PRESETS: dict[str, DGPSpec] = {
    "well_specified": DGPSpec(name="well_specified"),
    "rct": DGPSpec(a_type="bernoulli", a_p=0.5, J=500, name="rct"),
    "continuous": DGPSpec(a_type="normal", a_intercept=0.0, a_e=(0.4,), a_wbar=0.4, a_sd=1.0, y_a=0.5,
                          name="continuous"),
    "linear": DGPSpec(y_type="linear", y_intercept=0.4, y_a=0.2, y_e=(0.05,), y_w=(0.05,), y_sd=0.05,
                      name="linear"),
    "interference": DGPSpec(y_wbar=0.5, y_peer=0.5, name="interference"),
    "confounded": DGPSpec(u_a=1.5, u_y=1.5, name="confounded"),
    "single": DGPSpec(N=1, rho=0.0, J=500, name="single"),
}


def preset(name: str, **overrides) -> DGPSpec:
    if name not in PRESETS:
        raise SpecError(f"unknown DGP preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


# -- structural equations -------------------------------------------------------

def _sizes(dgp: DGPSpec, J: int, rng) -> np.ndarray:
    if dgp.N_range is None:
        return np.full(J, dgp.N, dtype=np.int64)
    return rng.integers(dgp.N_range[0], dgp.N_range[1] + 1, size=J)


def _draw_e(dgp: DGPSpec, J: int, rng) -> np.ndarray:
    if dgp.e_dist == "normal":
        return dgp.e_mean + dgp.e_sd * rng.standard_normal((J, dgp.e_dim))
    half = dgp.e_sd * math.sqrt(3.0)
    return rng.uniform(dgp.e_mean - half, dgp.e_mean + half, size=(J, dgp.e_dim))


def _draw_w(dgp: DGPSpec, E, group, rng) -> np.ndarray:
    J, M = E.shape[0], group.size
    shared = rng.standard_normal((J, dgp.w_dim))[group]
    own = rng.standard_normal((M, dgp.w_dim))
    noise = math.sqrt(dgp.rho) * shared + math.sqrt(1.0 - dgp.rho) * own
    return dgp.w_intercept + dgp.w_on_e * E[group, :1] + dgp.w_sd * noise


def _group_mean(v, group, sizes) -> np.ndarray:
    return np.bincount(group, weights=v, minlength=sizes.size) / sizes


def _others_mean(v, group, sizes) -> np.ndarray:
    tot = np.bincount(group, weights=v, minlength=sizes.size)[group]
    rest = sizes[group] - 1
    return np.where(rest > 0, (tot - v) / np.maximum(rest, 1), 0.0)


def exposure_linear_predictor(dgp: DGPSpec, E, wbar, U) -> np.ndarray:
    return dgp.a_intercept + E @ np.asarray(dgp.a_e) + dgp.a_wbar * wbar + dgp.u_a * U


def draw_exposure(dgp: DGPSpec, E, wbar, U, rng) -> np.ndarray:
    """Natural exposure ``A = f_A(E, W, U_A)``."""
    J = E.shape[0]
    if dgp.a_type == "bernoulli":
        return (rng.random(J) < dgp.a_p).astype(float)
    eta = exposure_linear_predictor(dgp, E, wbar, U)
    if dgp.a_type == "logistic":
        return (rng.random(J) < expit(eta)).astype(float)
    return eta + dgp.a_sd * rng.standard_normal(J)


def _outcome_eta(dgp: DGPSpec, a_ind, E_ind, W, wbar_others, U_ind) -> np.ndarray:
    return (dgp.y_intercept + dgp.y_a * a_ind + E_ind @ np.asarray(dgp.y_e) + W @ np.asarray(dgp.y_w)
            + dgp.y_wbar * wbar_others + dgp.u_y * U_ind)


def draw_outcome(dgp: DGPSpec, a_ind, E_ind, W, group, sizes, U_ind, rng, expected: bool = False) -> np.ndarray:
    """Individual outcomes ``Y = f_Y(E, W, A, U_Y)``; ``expected`` returns E[Y | E, W, A, U] where closed-form."""
    wbar_others = _others_mean(W[:, 0], group, sizes)
    eta = _outcome_eta(dgp, a_ind, E_ind, W, wbar_others, U_ind)
    lo, hi = dgp.y_bounds
    if dgp.y_type == "linear":
        y = eta + dgp.y_sd * rng.standard_normal(eta.size)
        return np.clip(y, lo, hi)
    p = expit(eta)
    if dgp.y_peer:
        first = (rng.random(p.size) < p).astype(float)
        p = expit(eta + dgp.y_peer * _others_mean(first, group, sizes))
    if expected:
        return p
    return (rng.random(p.size) < p).astype(float)


def _draw_communities(dgp: DGPSpec, J: int, rng):
    sizes = _sizes(dgp, J, rng)
    group = np.repeat(np.arange(J), sizes)
    E = _draw_e(dgp, J, rng)
    W = _draw_w(dgp, E, group, rng)
    U = rng.standard_normal(J) if (dgp.u_a or dgp.u_y) else np.zeros(J)
    return sizes, group, E, W, U


def generate(dgp: DGPSpec) -> HierarchicalDataset:
    """One dataset of ``dgp.J`` communities; deterministic in ``dgp.seed``."""
    rng = np.random.default_rng(dgp.seed)
    sizes, group, E, W, U = _draw_communities(dgp, dgp.J, rng)
    wbar = _group_mean(W[:, 0], group, sizes)
    A = draw_exposure(dgp, E, wbar, U, rng)
    Y = draw_outcome(dgp, A[group], E[group], W, group, sizes, U[group], rng)
    ids = tuple(f"c{j:05d}" for j in range(dgp.J))
    alpha = 1.0 / sizes[group]
    return HierarchicalDataset(ids, E, A, W, Y, alpha, group, dgp.outcome_bounds,
                               tuple(f"e_{k + 1}" for k in range(dgp.e_dim)),
                               tuple(f"w_{k + 1}" for k in range(dgp.w_dim)))


def _oracle_contexts(E, W, group, sizes, summary: SummarySpec) -> np.ndarray:
    m1 = np.column_stack([_group_mean(W[:, k], group, sizes) for k in range(W.shape[1])])
    m2 = np.column_stack([_group_mean(W[:, k] ** 2, group, sizes) for k in range(W.shape[1])])
    return context_from_moments(E, m1, m2, sizes.astype(float), summary)


def intervened_exposure(dgp: DGPSpec, spec: InterventionSpec, E, W, group, sizes, U, rng,
                        summary: SummarySpec = SummarySpec()) -> np.ndarray:
    """Draw ``A*`` from g* built on the true exposure mechanism."""
    J = E.shape[0]
    if spec.kind == "static":
        return np.full(J, float(spec.a_star))
    X = _oracle_contexts(E, W, group, sizes, summary)
    if spec.kind == "table":
        out = np.empty(J)
        u = rng.random(J)
        for j, (atoms, probs) in enumerate(spec.atoms_for(X)):
            k = min(int(np.searchsorted(np.cumsum(probs), u[j] * probs.sum(), side="right")), atoms.size - 1)
            out[j] = atoms[k]
        return out
    a_nat = draw_exposure(dgp, E, _group_mean(W[:, 0], group, sizes), U, rng)
    if spec.kind == "shift":
        return a_nat + spec.nu_values(X)
    if spec.floor is None:
        raise SpecError("the oracle needs an explicit floor for truncated_shift")
    return np.maximum(a_nat - spec.nu_values(X), spec.floor)


def oracle_psi(dgp: DGPSpec, gstar: InterventionSpec, m: int = 100_000, seed: int = 0,
               summary: SummarySpec = SummarySpec()) -> tuple[float, float]:
    """Monte Carlo ``E[Y^c_{g*}]`` over ``m`` simulated communities, with its standard error.

    Uses the structural equations of ``dgp`` directly; Bernoulli outcomes
    without peer effects contribute their conditional means.
    """
    if m < 2:
        raise SpecError("oracle needs m >= 2 replicate communities")
    rng = np.random.default_rng(seed)
    n_per = dgp.N if dgp.N_range is None else dgp.N_range[1]
    chunk = max(1, CHUNK_INDIVIDUALS // n_per)
    total = total_sq = 0.0
    done = 0
    while done < m:
        J = min(chunk, m - done)
        sizes, group, E, W, U = _draw_communities(dgp, J, rng)
        a_star = intervened_exposure(dgp, gstar, E, W, group, sizes, U, rng, summary)
        expected = dgp.y_type == "bernoulli" and not dgp.y_peer
        y = draw_outcome(dgp, a_star[group], E[group], W, group, sizes, U[group], rng, expected=expected)
        yc = _group_mean(y, group, sizes)
        total += yc.sum()
        total_sq += (yc ** 2).sum()
        done += J
    mean = total / m
    var = max(total_sq / m - mean ** 2, 0.0) * m / (m - 1)
    return float(mean), float(math.sqrt(var / m))
