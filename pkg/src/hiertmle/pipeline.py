"""End-to-end estimation: nuisance fits, targeting and reporting.

Nuisance models are fitted once per dataset and shared by every
intervention, so contrasts between interventions use the same ĝ.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import HierarchicalDataset
from .density import ConditionalDensityModel, DensityConfig, fit_density
from .features import SummarySpec, community_context
from .individual import IndividualDensityModel, IndividualGConfig, fit_individual_density
from .inference import EstimateReport, build_report, estimate_contrast
from .interventions import InterventionSpec, positivity_diagnostic
from .outcome import OutcomeConfig, OutcomeModel, fit_initial_outcome
from .tmle import (LEVEL_INDIVIDUAL, TargetingConfig, check_finite, community_inputs, individual_inputs,
                   mc_standard_error, target)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorConfig:
    density: DensityConfig = DensityConfig()
    outcome: OutcomeConfig = OutcomeConfig()
    targeting: TargetingConfig = TargetingConfig()
    individual_g: IndividualGConfig = IndividualGConfig()
    summary: SummarySpec = SummarySpec()


@dataclass(eq=False)
class Nuisances:
    g_hat: ConditionalDensityModel
    outcome: OutcomeModel
    summary: SummarySpec
    g_ind: IndividualDensityModel | None = None
    g_ind_masses: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    @property
    def g_fingerprint(self) -> str:
        h = hashlib.sha256(repr(self.g_hat.to_dict()).encode())
        return h.hexdigest()[:16]


def fit_nuisances(ds: HierarchicalDataset, cfg: EstimatorConfig = EstimatorConfig(),
                  g_hat: ConditionalDensityModel | None = None,
                  outcome: OutcomeModel | None = None) -> Nuisances:
    """Fit ĝ (on community contexts), the initial outcome model and, if needed, ĝ_I."""
    if g_hat is None:
        g_hat = fit_density(ds.a, community_context(ds, cfg.summary), cfg.density)
    if outcome is None:
        outcome = fit_initial_outcome(ds, cfg.outcome)
    nz = Nuisances(g_hat, outcome, cfg.summary)
    if cfg.targeting.level == LEVEL_INDIVIDUAL:
        nz.g_ind = fit_individual_density(ds, cfg.density, cfg.individual_g, cfg.summary, base=g_hat)
        nz.g_ind_masses = nz.g_ind.masses(ds)
        nz.warnings.extend(nz.g_ind.warnings)
    return nz


def _individual_gstar_warning(spec: InterventionSpec, ds: HierarchicalDataset) -> str | None:
    # contexts are [E, W summaries, N]; at the individual level g* may use E only
    if spec.nu_coef and len(spec.nu_coef) > ds.s and any(spec.nu_coef[ds.s:]):
        return "g* depends on community covariate summaries; the individual-level g* uses them as given"
    if spec.kind == "table" and spec.stratum_col is not None and spec.stratum_col >= ds.s:
        return "g* table is stratified on a covariate summary; the individual-level g* uses it as given"
    return None


def estimate(ds: HierarchicalDataset, spec: InterventionSpec, cfg: EstimatorConfig = EstimatorConfig(),
             nuisances: Nuisances | None = None) -> EstimateReport:
    """Targeted estimate of the mean community outcome under ``spec``."""
    nz = fit_nuisances(ds, cfg) if nuisances is None else nuisances
    tcfg = cfg.targeting
    floor = nz.g_hat.grid.lower
    warnings = list(nz.warnings)
    if tcfg.level == LEVEL_INDIVIDUAL:
        msg = _individual_gstar_warning(spec, ds)
        if msg:
            log.warning(msg)
            warnings.append(msg)
        if nz.g_ind is None:
            nz.g_ind = fit_individual_density(ds, cfg.density, cfg.individual_g, cfg.summary, base=nz.g_hat)
            nz.g_ind_masses = nz.g_ind.masses(ds)
        inputs, _ = individual_inputs(ds, spec, nz.g_ind, nz.outcome, tcfg, floor=floor, masses=nz.g_ind_masses)
    else:
        inputs, _ = community_inputs(ds, spec, nz.g_hat, nz.outcome, tcfg, nz.summary, floor=floor)
    fit = target(inputs, tcfg.variant)
    check_finite(fit)
    if not fit.solved:
        warnings.append(f"score equation not solved to tolerance (residual {fit.score:.3g})")
    X = community_context(ds, nz.summary)
    pos = positivity_diagnostic(spec, nz.g_hat, ds.a, X, tcfg.ratio_cap, floor=floor)
    pos.pop("ratios")
    if pos["n_flagged"]:
        warnings.append(f"positivity: {pos['n_flagged']} communities flagged (max g*/g {pos['max_ratio']:.3g})")
    diagnostics = {
        "positivity": pos,
        "truncation": dict(inputs.truncation, ratio_cap=tcfg.ratio_cap, max_h=float(inputs.h_obs.max())),
        "density_model": {"selected": nz.g_hat.cv_risk.get("selected"), "risks": nz.g_hat.cv_risk.get("risks", {}),
                          "k_bins": nz.g_hat.K, "exposure_type": nz.g_hat.exposure_type},
        "outcome_model": {"level": nz.outcome.level, "loss": nz.outcome.loss, "selected": nz.outcome.kind,
                          "risks": nz.outcome.cv_risk.get("risks", {})},
        "targeting": {"integration": tcfg.integration, "solved": fit.solved, "loss_initial": fit.loss_initial,
                      "loss_targeted": fit.loss_targeted},
        "g_fingerprint": nz.g_fingerprint,
    }
    if nz.g_ind is not None and tcfg.level == LEVEL_INDIVIDUAL:
        diagnostics["individual_g"] = {"plan": nz.g_ind.plan, "exact": nz.g_ind.exact,
                                       "n_profiles": int(nz.g_ind.profiles.shape[0])}
    return build_report(fit, ds.outcome_bounds, spec.to_dict(), ds.fingerprint(), mc_standard_error(fit),
                        diagnostics, warnings)


def estimate_all(ds: HierarchicalDataset, specs, cfg: EstimatorConfig = EstimatorConfig(), contrasts=(),
                 nuisances: Nuisances | None = None):
    """Reports for several interventions (shared nuisances) plus contrasts given as ``(name1, name2)`` pairs."""
    nz = fit_nuisances(ds, cfg) if nuisances is None else nuisances
    reports = {s.label: estimate(ds, s, cfg, nz) for s in specs}
    out_contrasts = [estimate_contrast(reports[a], reports[b]) for a, b in contrasts]
    return reports, out_contrasts
