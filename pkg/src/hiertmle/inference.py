"""Influence-curve values, Wald variance and confidence intervals.

All quantities are computed on the [0, 1] outcome scale and mapped back to
the natural scale with ``lo + (hi - lo) * x`` (estimates) and ``(hi - lo) * x``
(influence values), so reports are affine-equivariant in the outcome bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MismatchedRuns
from .tmle import LEVEL_COMMUNITY, TargetedFit, estimate_psi

Z95 = 1.96


@dataclass(frozen=True, eq=False)
class EICVector:
    """Per-community influence values ``D = D_Y + D_EW``."""

    d_y: np.ndarray
    d_ew: np.ndarray
    level: str = LEVEL_COMMUNITY

    @property
    def values(self) -> np.ndarray:
        return self.d_y + self.d_ew

    @property
    def J(self) -> int:
        return self.d_y.size

    def scaled(self, factor: float) -> "EICVector":
        return EICVector(self.d_y * factor, self.d_ew * factor, self.level)


def eic_values(fit: TargetedFit, psi_hat: float | None = None) -> EICVector:
    """``D_j = H_j (Y_j - Q*_j) + int Q* g* - psi``; α-averaged within communities at the individual level."""
    psi = estimate_psi(fit) if psi_hat is None else psi_hat
    d_y = fit.community_sum(fit.d_y_rows())
    d_ew = fit.community_sum(fit.integrals()) - psi
    return EICVector(d_y, d_ew, fit.level)


def variance_and_ci(d, psi_hat: float, z: float = Z95) -> dict:
    """``sigma2 = mean(D^2)``, ``variance = sigma2 / J`` and the Wald interval."""
    d = np.asarray(d.values if isinstance(d, EICVector) else d, dtype=float)
    J = d.size
    sigma2 = float(np.mean(d ** 2))
    variance = sigma2 / J
    half = z * math.sqrt(variance)
    return {"sigma2": sigma2, "variance": variance, "se": math.sqrt(variance),
            "ci": (psi_hat - half, psi_hat + half)}


@dataclass(eq=False)
class EstimateReport:
    """Point estimate, influence-curve inference and diagnostics for one intervention.

    ``psi_hat``, ``variance``, ``sigma2``, ``ci`` and ``eic`` are on the
    natural outcome scale; the ``*_scaled`` fields keep the [0, 1] values.
    """

    intervention: dict
    level: str
    variant: str
    psi_hat: float
    epsilon: float
    variance: float
    sigma2: float
    ci: tuple[float, float]
    eic: EICVector
    J: int
    outcome_bounds: tuple[float, float]
    psi_scaled: float
    score_residual: float
    dataset_fingerprint: str = ""
    mc_se: float | None = None
    diagnostics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def se(self) -> float:
        return math.sqrt(self.variance)

    def to_dict(self, include_eic: bool = True) -> dict:
        out = {
            "intervention": self.intervention,
            "level": self.level,
            "variant": self.variant,
            "psi_hat": self.psi_hat,
            "psi_scaled": self.psi_scaled,
            "epsilon": self.epsilon,
            "variance": self.variance,
            "se": self.se,
            "sigma2": self.sigma2,
            "ci": list(self.ci),
            "J": self.J,
            "outcome_bounds": list(self.outcome_bounds),
            "score_residual": self.score_residual,
            "mc_se": self.mc_se,
            "dataset_fingerprint": self.dataset_fingerprint,
            "diagnostics": self.diagnostics,
            "warnings": list(self.warnings),
            "eic_mean": float(np.mean(self.eic.values)),
        }
        if include_eic:
            out["eic"] = {"level": self.eic.level, "d": self.eic.values.tolist(), "d_y": self.eic.d_y.tolist(),
                          "d_ew": self.eic.d_ew.tolist()}
        return out


def build_report(fit: TargetedFit, bounds, intervention: dict, fingerprint: str = "", mc_se=None,
                 diagnostics: dict | None = None, warnings=None) -> EstimateReport:
    """Assemble an :class:`EstimateReport` from a targeted fit, unscaling to ``bounds``."""
    lo, hi = float(bounds[0]), float(bounds[1])
    width = hi - lo
    psi_s = estimate_psi(fit)
    eic = eic_values(fit, psi_s).scaled(width)
    psi = lo + width * psi_s
    inf = variance_and_ci(eic, psi)
    score = float(np.sum(fit.inputs.row_weight * fit.d_y_rows()))
    return EstimateReport(intervention, fit.level, fit.variant, psi, fit.epsilon, inf["variance"], inf["sigma2"],
                          inf["ci"], eic, eic.J, (lo, hi), psi_s, score, fingerprint,
                          None if mc_se is None else width * mc_se, diagnostics or {}, list(warnings or []))


@dataclass(frozen=True)
class ContrastReport:
    first: str
    second: str
    delta: float
    variance: float
    sigma2: float
    ci: tuple[float, float]

    def to_dict(self) -> dict:
        return {"first": self.first, "second": self.second, "delta": self.delta, "variance": self.variance,
                "se": math.sqrt(self.variance), "sigma2": self.sigma2, "ci": list(self.ci)}


def estimate_contrast(report1: EstimateReport, report2: EstimateReport) -> ContrastReport:
    """``psi_2 - psi_1`` with variance from the per-community difference ``D_2 - D_1``."""
    if report1.dataset_fingerprint != report2.dataset_fingerprint or report1.J != report2.J:
        raise MismatchedRuns("contrast needs two reports from the same dataset")
    if report1.outcome_bounds != report2.outcome_bounds or report1.level != report2.level:
        raise MismatchedRuns("contrast needs reports on the same outcome scale and level")
    if report1.diagnostics.get("g_fingerprint") != report2.diagnostics.get("g_fingerprint"):
        raise MismatchedRuns("contrast needs reports that share the fitted exposure model")
    delta = report2.psi_hat - report1.psi_hat
    inf = variance_and_ci(report2.eic.values - report1.eic.values, delta)
    return ContrastReport(report1.intervention.get("name", "first"), report2.intervention.get("name", "second"),
                          delta, inf["variance"], inf["sigma2"], inf["ci"])
