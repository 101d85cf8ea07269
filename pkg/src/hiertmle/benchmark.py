"""Replicate studies: bias, standard error and CI coverage against the oracle value."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .density import BinGrid, ConditionalDensityModel
from .errors import HierTMLEError
from .interventions import InterventionSpec
from .pipeline import EstimatorConfig, estimate, fit_nuisances
from .simulate import DGPSpec, generate, oracle_psi

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchmarkConfig:
    replicates: int = 500
    oracle_m: int = 1_000_000
    oracle_seed: int = 2024
    seed: int = 0
    fixed_g_masses: tuple[float, ...] | None = None  # replace ĝ by this covariate-free pmf (binary A)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be positive")


@dataclass(frozen=True)
class ReplicateResult:
    replicate: int
    seed: int
    psi_hat: float
    se: float
    ci_lo: float
    ci_hi: float
    covered: int
    error: str = ""


@dataclass(eq=False)
class BenchmarkResult:
    psi0: float
    psi0_se: float
    rows: list[ReplicateResult]
    aggregate: dict = field(default_factory=dict)


def replicate_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence([seed, r]).generate_state(1)[0])


def _one(args) -> ReplicateResult:
    dgp, spec, cfg, bcfg, r, psi0 = args
    s = replicate_seed(bcfg.seed, r)
    ds = generate(replace(dgp, seed=s))
    try:
        g_hat = None
        if bcfg.fixed_g_masses is not None:
            g_hat = ConditionalDensityModel.fixed(BinGrid(levels=np.arange(len(bcfg.fixed_g_masses), dtype=float)),
                                                  np.asarray(bcfg.fixed_g_masses))
        nz = fit_nuisances(ds, cfg, g_hat=g_hat)
        rep = estimate(ds, spec, cfg, nz)
    except (HierTMLEError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("replicate %d failed: %s", r, exc)
        return ReplicateResult(r, s, math.nan, math.nan, math.nan, math.nan, 0, str(exc))
    lo, hi = rep.ci
    return ReplicateResult(r, s, rep.psi_hat, rep.se, lo, hi, int(lo <= psi0 <= hi))


def aggregate(rows: list[ReplicateResult], psi0: float, psi0_se: float) -> dict:
    ok = [r for r in rows if not r.error]
    psi = np.array([r.psi_hat for r in ok])
    n = psi.size
    mean = float(psi.mean()) if n else math.nan
    emp_se = float(psi.std(ddof=1)) if n > 1 else math.nan
    mc_se = emp_se / math.sqrt(n) if n > 1 else math.nan
    bias = mean - psi0
    return {
        "n_ok": n,
        "n_failed": len(rows) - n,
        "psi0": psi0,
        "psi0_se": psi0_se,
        "mean_psi": mean,
        "bias": bias,
        "mc_se": mc_se,
        "bias_ok": bool(abs(bias) <= 2.0 * mc_se) if n > 1 else False,
        "empirical_se": emp_se,
        "mean_estimated_se": float(np.mean([r.se for r in ok])) if n else math.nan,
        "coverage": float(np.mean([r.covered for r in ok])) if n else math.nan,
    }


def run_benchmark(dgp: DGPSpec, spec: InterventionSpec, cfg: EstimatorConfig = EstimatorConfig(),
                  bcfg: BenchmarkConfig = BenchmarkConfig(), threads: int = 1,
                  psi0: tuple[float, float] | None = None) -> BenchmarkResult:
    """Estimate on ``bcfg.replicates`` fresh datasets and compare with the oracle ``psi0``."""
    if psi0 is None:
        psi0 = oracle_psi(dgp, spec, bcfg.oracle_m, bcfg.oracle_seed, cfg.summary)
    args = [(dgp, spec, cfg, bcfg, r, psi0[0]) for r in range(bcfg.replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_one, args, chunksize=max(1, len(args) // (4 * threads))))
    else:
        rows = [_one(a) for a in args]
    return BenchmarkResult(psi0[0], psi0[1], rows, aggregate(rows, *psi0))


def write_benchmark_csv(result: BenchmarkResult, path) -> None:
    """One row per replicate plus a final ``aggregate`` row."""
    cols = ["replicate", "seed", "psi_hat", "se", "ci_lo", "ci_hi", "covered", "psi0", "error"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols + ["bias", "mc_se", "empirical_se", "coverage"])
        for r in result.rows:
            w.writerow([r.replicate, r.seed, repr(r.psi_hat), repr(r.se), repr(r.ci_lo), repr(r.ci_hi), r.covered,
                        repr(result.psi0), r.error, "", "", "", ""])
        a = result.aggregate
        w.writerow(["aggregate", "", repr(a["mean_psi"]), repr(a["mean_estimated_se"]), "", "",
                    1 if a["bias_ok"] else 0, repr(result.psi0), f"failed={a['n_failed']}",
                    repr(a["bias"]), repr(a["mc_se"]), repr(a["empirical_se"]), repr(a["coverage"])])
