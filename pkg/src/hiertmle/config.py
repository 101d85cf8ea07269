"""Run configuration: one YAML (or JSON) file describing data, interventions and estimator settings.

Validation errors carry ``path:line`` of the offending key.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .benchmark import BenchmarkConfig
from .density import DensityConfig
from .errors import ConfigError
from .features import SummarySpec
from .individual import IndividualGConfig
from .interventions import InterventionSpec, load_table, stratum_key
from .outcome import OutcomeConfig
from .pipeline import EstimatorConfig
from .simulate import DGPSpec, PRESETS, preset
from .tmle import TargetingConfig

log = logging.getLogger(__name__)

DEFAULT_SEED = 42
TOP_KEYS = {"seed", "threads", "input", "dgp", "interventions", "contrasts", "density", "outcome", "summary",
            "targeting", "individual_g", "inference", "benchmark", "output"}


class _LineLoader(yaml.SafeLoader):
    """Safe loader that remembers the source line of every mapping key."""


def _construct_mapping(loader, node, deep=False):
    mapping = LineDict()
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        mapping[key] = loader.construct_object(value_node, deep=True)
        mapping.lines[key] = key_node.start_mark.line + 1
    mapping.line = node.start_mark.line + 1
    return mapping


class LineDict(dict):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.lines: dict = {}
        self.line = 0


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


@dataclass(frozen=True)
class RunConfig:
    seed: int = DEFAULT_SEED
    threads: int = 1
    input_path: str | None = None
    input_schema: dict = field(default_factory=dict)
    neighbors_path: str | None = None
    dgp: DGPSpec | None = None
    interventions: tuple[InterventionSpec, ...] = ()
    contrasts: tuple[tuple[str, str], ...] = ()
    estimator: EstimatorConfig = EstimatorConfig()
    include_eic: bool = True
    benchmark: BenchmarkConfig = BenchmarkConfig()
    output: str | None = None
    source: str = ""
    dgp_seed_explicit: bool = False

    def with_seed(self, seed: int) -> "RunConfig":
        kw = _seeded(self, seed)
        if self.dgp is not None and not self.dgp_seed_explicit:
            kw["dgp"] = replace(self.dgp, seed=seed)
        return replace(self, seed=seed, **kw)


def _seeded(cfg: RunConfig, seed: int) -> dict:
    est = cfg.estimator
    out = {"estimator": replace(est, density=replace(est.density, seed=seed), outcome=replace(est.outcome, seed=seed),
                                targeting=replace(est.targeting, seed=seed),
                                individual_g=replace(est.individual_g, seed=seed)),
           "benchmark": replace(cfg.benchmark, seed=seed)}
    return out


class _Ctx:
    def __init__(self, source: str):
        self.source = source

    def fail(self, block, key, msg):
        line = block.lines.get(key, block.line) if isinstance(block, LineDict) else 0
        raise ConfigError(f"{self.source}:{line}: {msg}")

    def block(self, parent, key, allowed) -> dict:
        raw = parent.get(key)
        if raw is None:
            return LineDict()
        if not isinstance(raw, dict):
            self.fail(parent, key, f"'{key}' must be a mapping")
        unknown = set(raw) - set(allowed)
        if unknown:
            self.fail(raw, sorted(unknown, key=str)[0], f"unknown key '{sorted(unknown, key=str)[0]}' in '{key}'")
        return raw


def _dc_kwargs(ctx: _Ctx, blk: dict, cls, rename=None, tuples=()) -> dict:
    names = {f.name for f in fields(cls)}
    out = {}
    for k, v in blk.items():
        name = (rename or {}).get(k, k)
        if name not in names:
            ctx.fail(blk, k, f"unknown key '{k}'")
        out[name] = tuple(v) if name in tuples and isinstance(v, list) else v
    return out


def _build(ctx: _Ctx, blk, key, cls, **kw):
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        ctx.fail(blk, key, str(exc))


def _intervention(ctx: _Ctx, item, base: Path) -> InterventionSpec:
    allowed = {"name", "kind", "a_star", "nu", "nu_coef", "floor", "table", "table_path", "stratum_col"}
    if not isinstance(item, dict):
        raise ConfigError(f"{ctx.source}: each intervention must be a mapping")
    unknown = set(item) - allowed
    if unknown:
        ctx.fail(item, sorted(unknown)[0], f"unknown intervention key '{sorted(unknown)[0]}'")
    kw = {k: item[k] for k in ("name", "kind", "a_star", "nu", "floor", "stratum_col") if k in item}
    if "kind" not in kw:
        ctx.fail(item, None, "intervention needs a 'kind'")
    if "nu_coef" in item:
        kw["nu_coef"] = tuple(item["nu_coef"])
    if "table_path" in item:
        try:
            kw["table"] = load_table(base / item["table_path"])
        except OSError as exc:
            ctx.fail(item, "table_path", f"cannot read table: {exc}")
    elif "table" in item:
        table = {}
        for key, atoms in item["table"].items():
            k = "*" if str(key) == "*" else stratum_key(float(key))
            table[k] = [(float(a), float(p)) for a, p in atoms]
        kw["table"] = table
    for num in ("a_star", "nu", "floor"):
        if num in kw and kw[num] is not None:
            try:
                kw[num] = float(kw[num])
            except (TypeError, ValueError):
                ctx.fail(item, num, f"'{num}' must be a number")
    try:
        return InterventionSpec(**kw)
    except ConfigError as exc:
        ctx.fail(item, "kind", str(exc))


def parse_config(text: str, source: str = "<config>", base_dir=".") -> RunConfig:
    ctx = _Ctx(source)
    try:
        raw = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        raise ConfigError(f"{source}:{line}: malformed config: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}:1: config must be a mapping")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        ctx.fail(raw, sorted(unknown, key=str)[0], f"unknown top-level key '{sorted(unknown, key=str)[0]}'")
    base = Path(base_dir)

    seed = raw.get("seed")
    if seed is None:
        log.warning("no seed given; using default %d", DEFAULT_SEED)
        seed = DEFAULT_SEED
    if not isinstance(seed, int) or isinstance(seed, bool):
        ctx.fail(raw, "seed", "'seed' must be an integer")
    threads = raw.get("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        ctx.fail(raw, "threads", "'threads' must be a positive integer")

    has_input, has_dgp = raw.get("input") is not None, raw.get("dgp") is not None
    if has_input == has_dgp:
        ctx.fail(raw, "input" if has_input else None, "exactly one of 'input' and 'dgp' is required")
    input_path = neighbors = None
    dgp_seed_explicit = False
    schema: dict = {}
    dgp = None
    if has_input:
        inp = ctx.block(raw, "input", {"path", "schema", "neighbors"})
        if "path" not in inp:
            ctx.fail(inp, None, "'input' needs a 'path'")
        input_path = str(base / inp["path"])
        schema = dict(inp.get("schema") or {})
        if inp.get("neighbors"):
            neighbors = str(base / inp["neighbors"])
    else:
        blk = raw["dgp"]
        if not isinstance(blk, dict):
            ctx.fail(raw, "dgp", "'dgp' must be a mapping")
        kw = {k: v for k, v in blk.items() if k != "preset"}
        names = {f.name for f in fields(DGPSpec)}
        for k in kw:
            if k not in names:
                ctx.fail(blk, k, f"unknown DGP key '{k}'")
            if isinstance(kw[k], list):
                kw[k] = tuple(kw[k])
        dgp_seed_explicit = "seed" in kw
        kw.setdefault("seed", seed)
        if "preset" in blk and blk["preset"] not in PRESETS:
            ctx.fail(blk, "preset", f"unknown preset '{blk['preset']}'")
        try:
            if "preset" in blk:
                dgp = preset(blk["preset"], **kw)
            else:
                dgp = DGPSpec(**kw)
        except (ConfigError, TypeError, ValueError) as exc:
            ctx.fail(blk, next(iter(blk), None), str(exc))

    items = raw.get("interventions") or []
    if not isinstance(items, list):
        ctx.fail(raw, "interventions", "'interventions' must be a list")
    specs = tuple(_intervention(ctx, it, base) for it in items)
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        ctx.fail(raw, "interventions", "intervention names must be unique")

    contrasts = []
    for pair in raw.get("contrasts") or []:
        if not (isinstance(pair, list) and len(pair) == 2 and all(p in labels for p in pair)):
            ctx.fail(raw, "contrasts", f"contrast {pair!r} must name two declared interventions")
        contrasts.append((str(pair[0]), str(pair[1])))

    dblk = ctx.block(raw, "density", {f.name for f in fields(DensityConfig)})
    oblk = ctx.block(raw, "outcome", {f.name for f in fields(OutcomeConfig)} - {"summary", "neighbors"})
    sblk = ctx.block(raw, "summary", {"stats", "include_n"})
    tblk = ctx.block(raw, "targeting", {f.name for f in fields(TargetingConfig)})
    iblk = ctx.block(raw, "individual_g", {f.name for f in fields(IndividualGConfig)})
    infblk = ctx.block(raw, "inference", {"include_eic"})
    bblk = ctx.block(raw, "benchmark", {f.name for f in fields(BenchmarkConfig)})
    outblk = ctx.block(raw, "output", {"path"})

    summary = _build(ctx, raw, "summary", SummarySpec, **_dc_kwargs(ctx, sblk, SummarySpec, tuples=("stats",)))
    density = _build(ctx, raw, "density", DensityConfig,
                     **_dc_kwargs(ctx, dblk, DensityConfig, tuples=("candidates",)))
    outcome = _build(ctx, raw, "outcome", OutcomeConfig, summary=summary,
                     **_dc_kwargs(ctx, oblk, OutcomeConfig, tuples=("candidates",)))
    try:
        targeting = TargetingConfig(**_dc_kwargs(ctx, tblk, TargetingConfig))
    except (ConfigError, TypeError) as exc:
        ctx.fail(raw, "targeting", str(exc))
    indiv = _build(ctx, raw, "individual_g", IndividualGConfig, **_dc_kwargs(ctx, iblk, IndividualGConfig))
    bkw = _dc_kwargs(ctx, bblk, BenchmarkConfig, tuples=("fixed_g_masses",))
    bench = _build(ctx, raw, "benchmark", BenchmarkConfig, **bkw)

    out_path = outblk.get("path")
    cfg = RunConfig(seed=seed, threads=threads, input_path=input_path, input_schema=schema, neighbors_path=neighbors,
                    dgp=dgp, interventions=specs, contrasts=tuple(contrasts),
                    estimator=EstimatorConfig(density, outcome, targeting, indiv, summary),
                    include_eic=bool(infblk.get("include_eic", True)), benchmark=bench,
                    output=None if out_path is None else str(base / out_path), source=source,
                    dgp_seed_explicit=dgp_seed_explicit)
    return cfg.with_seed(seed)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from None
    return parse_config(text, str(path), p.parent)
