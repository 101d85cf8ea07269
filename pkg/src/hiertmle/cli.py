"""Command-line front end: ``simulate``, ``estimate``, ``benchmark`` and ``report``.

Exit codes: 0 success, 2 configuration error, 3 input/output error,
4 estimation failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .benchmark import run_benchmark, write_benchmark_csv
from .config import RunConfig, load_config
from .data import HierarchicalDataset, load_dataset, write_dataset
from .errors import ConfigError, HierTMLEError, InvariantError, ParseError, SchemaError
from .outcome import load_neighbor_map
from .pipeline import estimate_all
from .simulate import generate

log = logging.getLogger("hiertmle")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ESTIMATION = 0, 2, 3, 4


class _IOFailure(Exception):
    pass


def report_schema() -> dict:
    text = resources.files("hiertmle").joinpath("schemas/report.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become ``null``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def dumps(doc: dict) -> str:
    return json.dumps(to_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _load_data(cfg: RunConfig) -> HierarchicalDataset:
    if cfg.input_path is None:
        return generate(cfg.dgp)
    try:
        return load_dataset(cfg.input_path, cfg.input_schema)
    except (OSError, ParseError, SchemaError, InvariantError) as exc:
        raise _IOFailure(str(exc)) from None


def _write(path, text: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise _IOFailure(f"{path}: {exc}") from None


def _config_summary(cfg: RunConfig) -> dict:
    est = asdict(cfg.estimator)
    est["outcome"].pop("neighbors", None)
    return {"dgp": None if cfg.dgp is None else cfg.dgp.to_dict(), "input": cfg.input_path,
            "interventions": [s.to_dict() for s in cfg.interventions], "contrasts": [list(c) for c in cfg.contrasts],
            "estimator": est}


def build_report_document(cfg: RunConfig, ds: HierarchicalDataset) -> dict:
    est_cfg = cfg.estimator
    if est_cfg.outcome.w_mode == "neighbors":
        if cfg.neighbors_path is None:
            raise ConfigError(f"{cfg.source}: outcome.w_mode 'neighbors' needs input.neighbors")
        try:
            nb = load_neighbor_map(cfg.neighbors_path, ds)
        except (OSError, ValueError, KeyError) as exc:
            raise _IOFailure(f"{cfg.neighbors_path}: {exc}") from None
        est_cfg = replace(est_cfg, outcome=replace(est_cfg.outcome, neighbors=nb))
    reports, contrasts = estimate_all(ds, cfg.interventions, est_cfg, cfg.contrasts)
    warnings = sorted({w for r in reports.values() for w in r.warnings})
    return {
        "tool": "hiertmle",
        "version": __version__,
        "seed": cfg.seed,
        "config": _config_summary(cfg),
        "dataset": {"J": ds.J, "n_individuals": ds.n_individuals, "fingerprint": ds.fingerprint(),
                    "outcome_bounds": list(ds.outcome_bounds), "constant_size": ds.constant_size},
        "estimates": [r.to_dict(include_eic=cfg.include_eic) for r in reports.values()],
        "contrasts": [c.to_dict() for c in contrasts],
        "warnings": warnings,
    }


def cmd_simulate(cfg: RunConfig, out: str | None) -> int:
    if cfg.dgp is None:
        raise ConfigError(f"{cfg.source}: 'simulate' needs a 'dgp' block")
    path = out or cfg.output
    if path is None:
        raise ConfigError(f"{cfg.source}: no output path (use --out or output.path)")
    ds = generate(cfg.dgp)
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        write_dataset(ds, path)
    except OSError as exc:
        raise _IOFailure(f"{path}: {exc}") from None
    log.info("wrote %d communities / %d individuals to %s", ds.J, ds.n_individuals, path)
    return EXIT_OK


def cmd_estimate(cfg: RunConfig, out: str | None) -> int:
    if not cfg.interventions:
        raise ConfigError(f"{cfg.source}: at least one intervention is required")
    ds = _load_data(cfg)
    doc = build_report_document(cfg, ds)
    jsonschema.validate(to_jsonable(doc), report_schema())
    text = dumps(doc)
    path = out or cfg.output
    if path is None:
        sys.stdout.write(text)
    else:
        _write(path, text)
    for w in doc["warnings"]:
        log.warning(w)
    return EXIT_OK


def cmd_benchmark(cfg: RunConfig, out: str | None, threads: int) -> int:
    if cfg.dgp is None:
        raise ConfigError(f"{cfg.source}: 'benchmark' needs a 'dgp' block")
    if len(cfg.interventions) != 1:
        raise ConfigError(f"{cfg.source}: 'benchmark' needs exactly one intervention")
    result = run_benchmark(cfg.dgp, cfg.interventions[0], cfg.estimator, cfg.benchmark, threads)
    path = out or cfg.output
    if path is None:
        raise ConfigError(f"{cfg.source}: no output path (use --out or output.path)")
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        write_benchmark_csv(result, path)
    except OSError as exc:
        raise _IOFailure(f"{path}: {exc}") from None
    a = result.aggregate
    log.info("bias %.4g (MC SE %.3g), coverage %.3f", a["bias"], a["mc_se"], a["coverage"])
    return EXIT_OK


def _fmt(v) -> str:
    if v is None:
        return "nan"
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def format_report(doc: dict) -> str:
    lines = [f"J = {doc['dataset']['J']}, individuals = {doc['dataset']['n_individuals']}, seed = {doc['seed']}", ""]
    head = f"{'intervention':<20} {'level':<11} {'psi':>10} {'se':>10} {'ci_lo':>10} {'ci_hi':>10} {'max_H':>8} {'trunc':>6}"
    lines += [head, "-" * len(head)]
    for e in doc["estimates"]:
        tr = e["diagnostics"]["truncation"]
        lo, hi = e["ci"]
        lines.append(f"{e['intervention']['name']:<20} {e['level']:<11} {_fmt(e['psi_hat']):>10} {_fmt(e['se']):>10} "
                     f"{_fmt(lo):>10} {_fmt(hi):>10} {_fmt(tr['max_h']):>8} {tr['n_truncated']:>6}")
    if doc["contrasts"]:
        lines += ["", f"{'contrast':<31} {'delta':>10} {'se':>10} {'ci_lo':>10} {'ci_hi':>10}"]
        for c in doc["contrasts"]:
            lo, hi = c["ci"]
            name = f"{c['second']} - {c['first']}"
            lines.append(f"{name:<31} {_fmt(c['delta']):>10} {_fmt(c['se']):>10} {_fmt(lo):>10} {_fmt(hi):>10}")
    if doc["warnings"]:
        lines += ["", "warnings:"] + [f"  - {w}" for w in doc["warnings"]]
    return "\n".join(lines) + "\n"


def cmd_report(path: str) -> int:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise _IOFailure(f"{path}: {exc}") from None
    try:
        jsonschema.validate(doc, report_schema())
    except jsonschema.ValidationError as exc:
        raise _IOFailure(f"{path}: not a valid report: {exc.message}") from None
    sys.stdout.write(format_report(doc))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiertmle", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("simulate", "write a simulated dataset"), ("estimate", "estimate and write a JSON report"),
                       ("benchmark", "run a replicate study and write a CSV summary")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="YAML or JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--threads", type=int, default=None, help="worker processes for replicate studies")
        p.add_argument("--out", default=None, help="output path (overrides output.path)")
    p = sub.add_parser("report", help="print a JSON report as a table")
    p.add_argument("report", help="report written by 'estimate'")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "report":
            return cmd_report(args.report)
        if not Path(args.config).is_file():
            raise _IOFailure(f"{args.config}: config file not found")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        threads = args.threads if args.threads is not None else cfg.threads
        if threads < 1:
            raise ConfigError("--threads must be positive")
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "estimate":
            return cmd_estimate(cfg, args.out)
        return cmd_benchmark(cfg, args.out, threads)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except _IOFailure as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (HierTMLEError, jsonschema.ValidationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("estimation failed: %s", exc)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    raise SystemExit(main())
