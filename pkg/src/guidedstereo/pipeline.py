"""Configured end-to-end runs, the ablation matrix and the density sweep."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import os
import platform
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .costvol import (
    CostVolume,
    Orientation,
    census_cost,
    sad_cost,
    sgm_aggregate,
    subpixel_refine,
    to_score,
    wta,
)
from .enhancement import EnhanceParams, apply_enhancement, no_fade
from .expansion import ExpansionParams, GuidanceField, cue_field, expand
from .imgio import PRNG_NAME, DisparityMap, ImagePair, SparseCueSet, sample_cues_by_coverage
from .metrics import EvalReport, evaluate

log = logging.getLogger(__name__)

STAGES = ("pre_aggregation", "post_aggregation")
BACKBONES = ("census", "sad")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneParams:
    kind: str = "census"
    window: int = 5

    def __post_init__(self):
        if self.kind not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be a positive odd integer, got {self.window}")


@dataclass(frozen=True)
class SGMParams:
    enabled: bool = True
    p1: float = 4.0
    p2: float = 40.0
    paths: int = 4

    def __post_init__(self):
        if self.paths not in (4, 8) or not 0 <= self.p1 <= self.p2:
            raise ConfigError("sgm needs paths in {4, 8} and 0 <= p1 <= p2")


@dataclass(frozen=True)
class RunConfig:
    backbone: BackboneParams = field(default_factory=BackboneParams)
    sgm: SGMParams = field(default_factory=SGMParams)
    expansion: ExpansionParams = field(default_factory=ExpansionParams)
    enhancement: EnhanceParams = field(default_factory=EnhanceParams)
    enhance_stage: str = "post_aggregation"
    d_max: int = 64
    subpixel: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.enhance_stage not in STAGES:
            raise ConfigError(f"enhance_stage must be one of {STAGES}")
        if self.d_max < 1:
            raise ConfigError("d_max must be >= 1")

    def with_enhancement(self, params: EnhanceParams) -> RunConfig:
        return replace(self, enhancement=params)


# hyper-parameter rows of the reference experiments
PRESET_ENHANCEMENT = {
    "f-default": EnhanceParams("f", h=20.0, w=1.0, v=30.0),
    "fs-psmnet": EnhanceParams("fs", h=20.0, w=1.0, v=1.0, b=0.1),
    "fs-ganet": EnhanceParams("fs", h=100.0, w=1.0, v=10.0, b=1.0),
    "gsm-default": EnhanceParams("gsm", h=10.0, w=1.0),
}
DEFAULT_PRESET = "fs-psmnet"


def preset(name: str, **overrides) -> RunConfig:
    if name not in PRESET_ENHANCEMENT:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESET_ENHANCEMENT)}")
    return replace(RunConfig(enhancement=PRESET_ENHANCEMENT[name]), **overrides)


# ---------------------------------------------------------------------------
# config text format

_SECTIONS = {
    "backbone": BackboneParams,
    "sgm": SGMParams,
    "expansion": ExpansionParams,
    "enhancement": EnhanceParams,
}
_RUN_KEYS = ("enhance_stage", "d_max", "subpixel", "seed")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(text: str, like):
    if isinstance(like, bool):
        low = text.strip().lower()
        if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
            raise ConfigError(f"not a boolean: {text!r}")
        return low in ("true", "yes", "1", "on")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text.strip()


def format_config(cfg: RunConfig) -> str:
    """Canonical text form: fixed section and key order, repr floats."""
    lines = []
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        for f in dataclasses.fields(getattr(cfg, name)):
            lines.append(f"{f.name} = {_fmt(getattr(getattr(cfg, name), f.name))}")
        lines.append("")
    lines.append("[run]")
    for key in _RUN_KEYS:
        lines.append(f"{key} = {_fmt(getattr(cfg, key))}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse INI text; missing keys fall back to ``base`` (or its preset)."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    if base is None:
        name = cp.get("run", "preset", fallback=None)
        base = preset(name) if name else RunConfig()
    known = set(_SECTIONS) | {"run"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    parts = {}
    try:
        for name, cls in _SECTIONS.items():
            current = getattr(base, name)
            values = {}
            if name in cp:
                names = {f.name for f in dataclasses.fields(cls)}
                for key, raw in cp[name].items():
                    if key not in names:
                        raise ConfigError(f"unknown key {name}.{key}")
                    values[key] = _coerce(raw, getattr(current, key))
            parts[name] = replace(current, **values)
        run_vals = {}
        if "run" in cp:
            for key, raw in cp["run"].items():
                if key == "preset":
                    continue
                if key not in _RUN_KEYS:
                    raise ConfigError(f"unknown key run.{key}")
                run_vals[key] = _coerce(raw, getattr(base, key))
        return replace(base, **parts, **run_vals)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(format_config(cfg).encode()).hexdigest()


# ---------------------------------------------------------------------------
# running


def backbone_volume(pair: ImagePair, cfg: RunConfig, workers: int = 1) -> CostVolume:
    build = census_cost if cfg.backbone.kind == "census" else sad_cost
    return build(pair, cfg.d_max, cfg.backbone.window, workers=workers)


def guidance_field(pair: ImagePair, cues: SparseCueSet, cfg: RunConfig,
                   workers: int = 1) -> GuidanceField | None:
    variant = cfg.enhancement.variant
    if variant == "none":
        return None
    if variant in ("gsm", "hard"):
        return cue_field(cues, pair.shape)
    return expand(pair.left, cues, cfg.expansion, workers=workers)


def _to_cost(vol: CostVolume) -> CostVolume:
    vol.require(Orientation.SCORE)
    v = vol.values
    return CostVolume(v.max(axis=2, keepdims=True) - v, Orientation.COST)


def _aggregate(vol: CostVolume, cfg: RunConfig, workers: int) -> CostVolume:
    if not cfg.sgm.enabled:
        return vol
    return sgm_aggregate(vol, cfg.sgm.p1, cfg.sgm.p2, cfg.sgm.paths, workers=workers)


def finish(raw: CostVolume, fld: GuidanceField | None, cfg: RunConfig, workers: int = 1,
           aggregated: CostVolume | None = None) -> DisparityMap:
    """Run aggregation, enhancement and WTA on a precomputed backbone volume.

    ``aggregated`` may carry the already aggregated volume for post-stage
    runs so that several variants can share one SGM pass.
    """
    enhance = cfg.enhancement.variant != "none" and fld is not None
    if cfg.enhance_stage == "pre_aggregation":
        vol = raw
        if enhance:
            vol = _to_cost(apply_enhancement(to_score(vol), fld, cfg.enhancement))
        cost = _aggregate(vol, cfg, workers)
        disp = wta(cost)
    else:
        cost = aggregated if aggregated is not None else _aggregate(raw, cfg, workers)
        if enhance:
            score = apply_enhancement(to_score(cost), fld, cfg.enhancement)
            disp = wta(score)
            cost = _to_cost(score)
        else:
            disp = wta(cost)
    if cfg.subpixel:
        disp = subpixel_refine(cost, disp)
    return DisparityMap(disp.values, cfg.d_max)


def run(pair: ImagePair, cues: SparseCueSet | None, gt: DisparityMap | None,
        cfg: RunConfig, workers: int = 1) -> tuple[DisparityMap, EvalReport | None]:
    """Backbone -> (expansion) -> enhancement -> WTA, evaluated against ``gt``."""
    if cues is None:
        cues = SparseCueSet(d_max=cfg.d_max)
    cues.check_bounds(*pair.shape)
    if gt is not None and gt.shape != pair.shape:
        raise ValueError("ground truth shape does not match the image pair")
    log.info("stage: %s cost (window %d, d_max %d)", cfg.backbone.kind,
             cfg.backbone.window, cfg.d_max)
    raw = backbone_volume(pair, cfg, workers)
    fld = guidance_field(pair, cues, cfg, workers)
    log.info("stage: enhancement %s %s, %d cues", cfg.enhancement.variant,
             cfg.enhance_stage, len(cues))
    disp = finish(raw, fld, cfg, workers)
    report = evaluate(disp, gt) if gt is not None else None
    return disp, report


ABLATION_ROWS = ("baseline", "w/o expansion", "w/ expansion", "w/ f", "w/ fs", "hard")


def ablation_configs(base: RunConfig) -> dict:
    """One config per ablation row, everything but enhancement held fixed."""
    enh = base.enhancement
    gsm = PRESET_ENHANCEMENT["gsm-default"]
    f = enh if enh.variant == "f" else PRESET_ENHANCEMENT["f-default"]
    fs = enh if enh.variant == "fs" else PRESET_ENHANCEMENT[DEFAULT_PRESET]
    rows = {
        "baseline": EnhanceParams("none"),
        "w/o expansion": gsm,
        "w/ expansion": no_fade(gsm),
        "w/ f": f,
        "w/ fs": fs,
        "hard": EnhanceParams("hard"),
    }
    return {name: base.with_enhancement(p) for name, p in rows.items()}


def ablate(pair: ImagePair, cues: SparseCueSet, gt: DisparityMap, base: RunConfig,
           workers: int = 1, rows=ABLATION_ROWS) -> dict:
    """Evaluate every ablation row on the same inputs and cue set."""
    configs = ablation_configs(base)
    raw = backbone_volume(pair, base, workers)
    agg = _aggregate(raw, base, workers) if base.enhance_stage == "post_aggregation" else None
    fields = _FieldCache(pair, cues, workers)
    out = {}
    for name in rows:
        cfg = configs[name]
        disp = finish(raw, fields.get(cfg), cfg, workers, aggregated=agg)
        out[name] = evaluate(disp, gt)
    return out


class _FieldCache:
    """Guidance fields shared by variants with the same expansion needs."""

    def __init__(self, pair: ImagePair, cues: SparseCueSet, workers: int = 1):
        self.pair, self.cues, self.workers = pair, cues, workers
        self._cache = {}

    def get(self, cfg: RunConfig) -> GuidanceField | None:
        variant = cfg.enhancement.variant
        if variant == "none":
            return None
        key = "cue" if variant in ("gsm", "hard") else cfg.expansion
        if key not in self._cache:
            self._cache[key] = guidance_field(self.pair, self.cues, cfg, self.workers)
        return self._cache[key]


@dataclass
class SweepSpec:
    densities: list
    repeats: int
    base: RunConfig
    scenes: list  # (ImagePair, DisparityMap) tuples
    variants: dict = field(default_factory=dict)

    def validate(self) -> None:
        d = list(self.densities)
        if not d or any(not 0 < x <= 1 for x in d):
            raise ValueError("densities must lie in (0, 1]")
        steps = np.diff(d)
        if len(d) > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
            raise ValueError("densities must be strictly monotone")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not self.scenes:
            raise ValueError("sweep needs at least one scene")


def default_sweep_variants(base: RunConfig) -> dict:
    return {
        "none": base.with_enhancement(EnhanceParams("none")),
        "gsm": base.with_enhancement(PRESET_ENHANCEMENT["gsm-default"]),
        "ours": base,
    }


def cue_seed(base_seed: int, scene: int, density: int, repeat: int) -> int:
    ss = np.random.SeedSequence([base_seed, scene, density, repeat])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _sweep_scene(idx: int, pair, gt, spec: SweepSpec, variants: dict) -> list:
    base = spec.base
    raw = backbone_volume(pair, base)
    agg = _aggregate(raw, base, 1) if base.enhance_stage == "post_aggregation" else None
    rows = []
    for di, density in enumerate(spec.densities):
        for rep in range(spec.repeats):
            cues = sample_cues_by_coverage(gt, density, cue_seed(base.seed, idx, di, rep),
                                           d_max=base.d_max)
            fields = _FieldCache(pair, cues)
            for name, cfg in variants.items():
                disp = finish(raw, fields.get(cfg), cfg, aggregated=agg)
                rows.append((density, name, idx, rep, evaluate(disp, gt).avg_px))
    return rows


def sweep(spec: SweepSpec, workers: int = 1) -> list:
    """Mean/std of avg_px per (density, variant) over scenes and repeats.

    Returns dict rows with keys density, variant, mean_avg_px, std_avg_px, n.
    """
    spec.validate()
    variants = spec.variants or default_sweep_variants(spec.base)
    jobs = list(enumerate(spec.scenes))

    def one(job):
        idx, (pair, gt) = job
        return _sweep_scene(idx, pair, gt, spec, variants)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(one, jobs))
    else:
        parts = [one(j) for j in jobs]
    samples: dict = {}
    for part in parts:
        for density, name, _, _, err in part:
            samples.setdefault((density, name), []).append(err)
    out = []
    for density in spec.densities:
        for name in variants:
            vals = np.array(samples[(density, name)])
            out.append({"density": density, "variant": name,
                        "mean_avg_px": float(vals.mean()), "std_avg_px": float(vals.std()),
                        "n": int(vals.size)})
    return out


SWEEP_HEADER = ("density", "variant", "mean_avg_px", "std_avg_px", "n")


def format_sweep_csv(rows: list) -> str:
    lines = [",".join(SWEEP_HEADER)]
    for r in rows:
        lines.append(f"{r['density']!r},{r['variant']},{r['mean_avg_px']!r},"
                     f"{r['std_avg_px']!r},{r['n']}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# manifests and atomic output


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_record(command: str, cfg: RunConfig | None, inputs: dict, outputs: dict,
                    extra: dict | None = None) -> dict:
    rec = {
        "command": command,
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "prng": PRNG_NAME,
        "inputs": {k: {"path": str(p), "sha256": file_sha256(p)} for k, p in inputs.items()},
        "outputs": {k: str(p) for k, p in outputs.items()},
    }
    if cfg is not None:
        rec["config"] = format_config(cfg)
        rec["config_sha256"] = config_hash(cfg)
    if extra:
        rec.update(extra)
    return rec


def append_manifest(path, record: dict) -> None:
    with open(path, "a") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def atomic_write(path, writer) -> None:
    """Call ``writer(tmp_path)`` then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=".tmp-", suffix=path.suffix)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
