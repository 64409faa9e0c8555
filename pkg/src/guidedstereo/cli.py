"""Command line interface.

Exit codes: 0 success, 2 input error, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import imgio, synth
from .enhancement import EnhanceParams
from .expansion import ExpansionParams, expand
from .metrics import evaluate, format_table
from .pipeline import (
    DEFAULT_PRESET,
    PRESET_ENHANCEMENT,
    BackboneParams,
    ConfigError,
    RunConfig,
    SGMParams,
    SweepSpec,
    ablate,
    append_manifest,
    atomic_write,
    format_sweep_csv,
    manifest_record,
    parse_config,
    preset,
    run,
    sweep,
)

EXIT_OK, EXIT_INPUT, EXIT_CONFIG = 0, 2, 3

log = logging.getLogger("guidedstereo")


def _disp_format(path, explicit=None) -> str:
    if explicit:
        return explicit
    suffix = Path(path).suffix.lower()
    return {".pfm": "pfm", ".png": "kitti_png", ".csv": "csv"}.get(suffix, "pfm")


def _save_disp(disp, path, fmt=None) -> None:
    atomic_write(path, lambda tmp: imgio.save_disparity(disp, tmp, _disp_format(path, fmt)))


def _manifest_path(args, out) -> Path:
    return Path(args.manifest) if args.manifest else Path(str(out) + ".manifest.jsonl")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (flags override --config / --preset)")
    g.add_argument("--config", help="INI run configuration file")
    g.add_argument("--preset", help=f"one of {', '.join(sorted(PRESET_ENHANCEMENT))}")
    g.add_argument("--backbone", choices=("census", "sad"))
    g.add_argument("--window", type=int)
    g.add_argument("--no-sgm", action="store_true")
    g.add_argument("--p1", type=float)
    g.add_argument("--p2", type=float)
    g.add_argument("--paths", type=int, choices=(4, 8))
    g.add_argument("--tau", type=float)
    g.add_argument("--L", type=int, dest="arm_limit")
    g.add_argument("--region", choices=("cross", "square"))
    g.add_argument("--anchor", choices=("arm", "center"))
    g.add_argument("--variant", help="none, gsm, f, fs or hard")
    g.add_argument("--h", type=float, dest="gauss_h")
    g.add_argument("--w", type=float, dest="gauss_w")
    g.add_argument("--v", type=float, dest="gauss_v")
    g.add_argument("--b", type=float, dest="gauss_b")
    g.add_argument("--stage", choices=("pre_aggregation", "post_aggregation"))
    g.add_argument("--d-max", type=int)
    g.add_argument("--subpixel", action="store_true")
    g.add_argument("--seed", type=int)


def _pick(value, default):
    return default if value is None else value


def build_config(args) -> RunConfig:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        base = preset(args.preset) if args.preset else None
        cfg = parse_config(text, base)
    else:
        cfg = preset(args.preset or DEFAULT_PRESET)
    try:
        b, s, e, n = cfg.backbone, cfg.sgm, cfg.expansion, cfg.enhancement
        return replace(
            cfg,
            backbone=BackboneParams(_pick(args.backbone, b.kind), _pick(args.window, b.window)),
            sgm=SGMParams(s.enabled and not args.no_sgm, _pick(args.p1, s.p1),
                          _pick(args.p2, s.p2), _pick(args.paths, s.paths)),
            expansion=ExpansionParams(_pick(args.tau, e.tau), _pick(args.arm_limit, e.L),
                                      _pick(args.region, e.region), _pick(args.anchor, e.anchor)),
            enhancement=EnhanceParams(_pick(args.variant, n.variant), _pick(args.gauss_h, n.h),
                                      _pick(args.gauss_w, n.w), _pick(args.gauss_v, n.v),
                                      _pick(args.gauss_b, n.b)),
            enhance_stage=_pick(args.stage, cfg.enhance_stage),
            d_max=_pick(args.d_max, cfg.d_max),
            subpixel=cfg.subpixel or args.subpixel,
            seed=_pick(args.seed, cfg.seed),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_pair(args) -> imgio.ImagePair:
    return imgio.ImagePair(imgio.load_image(args.left), imgio.load_image(args.right))


# ---------------------------------------------------------------------------
# subcommands


def cmd_match(args) -> int:
    cfg = build_config(args)
    pair = _load_pair(args)
    cues = (imgio.load_cues(args.cues, cfg.d_max, pair.shape) if args.cues
            else imgio.SparseCueSet(d_max=cfg.d_max))
    gt = imgio.load_disparity(args.gt, _disp_format(args.gt)) if args.gt else None
    disp, report = run(pair, cues, gt, cfg, workers=args.workers)
    _save_disp(disp, args.out, args.format)
    inputs = {"left": args.left, "right": args.right}
    if args.cues:
        inputs["cues"] = args.cues
    if args.gt:
        inputs["gt"] = args.gt
    extra = {"n_cues": len(cues)}
    if report is not None:
        extra["report"] = report.as_row()
        print(format_table({cfg.enhancement.variant: report}))
    append_manifest(_manifest_path(args, args.out),
                    manifest_record("match", cfg, inputs, {"disparity": args.out}, extra))
    return EXIT_OK


def cmd_expand(args) -> int:
    image = imgio.load_image(args.image)
    cues = imgio.load_cues(args.cues, shape=image.shape[:2])
    params = ExpansionParams(args.tau, args.arm_limit, args.region, args.anchor)
    fld = expand(image, cues, params, workers=args.workers)
    _save_disp(fld.to_disparity(), args.out, args.format)
    outputs = {"expanded": args.out}
    if args.dist_out:
        # distance 0 at the cue pixels is stored as-is
        dist = fld.distance_map()
        atomic_write(args.dist_out, lambda tmp: imgio.save_disparity(dist, tmp, "pfm"))
        outputs["distance"] = args.dist_out
    covered = float(fld.mask.mean())
    print(f"cues={len(cues)} coverage={covered:.4f}")
    append_manifest(_manifest_path(args, args.out), manifest_record(
        "expand", None, {"image": args.image, "cues": args.cues}, outputs,
        {"expansion": asdict(params),
         "coverage": covered}))
    return EXIT_OK


def cmd_eval(args) -> int:
    gt = imgio.load_disparity(args.gt, _disp_format(args.gt, args.gt_format))
    pred = imgio.load_disparity(args.pred, _disp_format(args.pred, args.pred_format),
                                shape=gt.shape, zero_invalid=False)
    report = evaluate(pred, gt)
    print(format_table({Path(args.pred).name: report}))
    print(report.to_json())
    if args.csv:
        row = report.as_row()
        text = ",".join(row) + "\n" + ",".join(repr(v) for v in row.values()) + "\n"
        atomic_write(args.csv, lambda tmp: Path(tmp).write_text(text))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    pair = _load_pair(args)
    cues = imgio.load_cues(args.cues, cfg.d_max, pair.shape)
    gt = imgio.load_disparity(args.gt, _disp_format(args.gt))
    reports = ablate(pair, cues, gt, cfg, workers=args.workers)
    print(format_table(reports))
    if args.csv:
        ns = sorted(next(iter(reports.values())).err_rate)
        lines = ["row,avg_px," + ",".join(f"err>{n}" for n in ns)]
        for name, r in reports.items():
            lines.append(f"{name},{r.avg_px!r}," + ",".join(repr(r.err_rate[n]) for n in ns))
        text = "\n".join(lines) + "\n"
        atomic_write(args.csv, lambda tmp: Path(tmp).write_text(text))
        append_manifest(_manifest_path(args, args.csv), manifest_record(
            "ablate", cfg, {"left": args.left, "right": args.right, "cues": args.cues,
                            "gt": args.gt}, {"table": args.csv},
            {"rows": {k: v.as_row() for k, v in reports.items()}}))
    return EXIT_OK


def _scene_list(args, d_max: int) -> list:
    specs = []
    for path in args.scene or []:
        try:
            specs.append(synth.parse_scene(Path(path).read_text()))
        except OSError as exc:
            raise FileNotFoundError(str(exc)) from exc
    for i in range(args.battery):
        specs.append(synth.two_layer_scene(args.battery_seed + i, d_max=d_max,
                                           slant=args.slant, noise_sigma=args.noise))
    if not specs:
        raise ConfigError("sweep needs --scene files or --battery N")
    for spec in specs:
        if spec.d_max > d_max:
            raise ConfigError(f"scene d_max {spec.d_max} exceeds run d_max {d_max}")
    return specs


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    specs = _scene_list(args, cfg.d_max)
    scenes = []
    for spec in specs:
        r = synth.render(spec)
        scenes.append((r.pair, r.gt))
    sw = SweepSpec([float(d) for d in args.densities.split(",")], args.repeats, cfg, scenes)
    try:
        sw.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = sweep(sw, workers=args.workers)
    text = format_sweep_csv(rows)
    if args.out:
        atomic_write(args.out, lambda tmp: Path(tmp).write_text(text))
        append_manifest(_manifest_path(args, args.out), manifest_record(
            "sweep", cfg, {}, {"csv": args.out},
            {"scenes": [synth.format_scene(s) for s in specs],
             "densities": sw.densities, "repeats": sw.repeats}))
    sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        text = Path(args.scene).read_text()
    except OSError as exc:
        raise FileNotFoundError(str(exc)) from exc
    try:
        spec = synth.parse_scene(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    r = synth.render(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "left": out / "left.png",
        "right": out / "right.png",
        "gt": out / "gt.pfm",
        "occlusion": out / "occlusion.png",
    }
    atomic_write(files["left"], lambda tmp: imgio.save_image(r.pair.left, Path(tmp)))
    atomic_write(files["right"], lambda tmp: imgio.save_image(r.pair.right, Path(tmp)))
    atomic_write(files["gt"], lambda tmp: imgio.save_disparity(r.gt, tmp, "pfm"))
    atomic_write(files["occlusion"], lambda tmp: imgio.save_image(r.occlusion, Path(tmp)))
    if args.cues is not None:
        cues = imgio.sample_cues_by_coverage(r.gt, args.cues, spec.seed, d_max=spec.d_max)
        files["cues"] = out / "cues.csv"
        atomic_write(files["cues"], lambda tmp: imgio.save_cues(cues, tmp))
    append_manifest(out / "manifest.jsonl", manifest_record(
        "synth", None, {"scene": args.scene}, {k: str(v) for k, v in files.items()}))
    print(json.dumps({k: str(v) for k, v in files.items()}))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guidedstereo",
        description="Stereo matching steered by sparse disparity cues.",
        epilog="exit codes: 0 success, 2 input error, 3 configuration error")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--manifest", help="JSON-lines manifest (default: <output>.manifest.jsonl)")

    p = sub.add_parser("match", help="dense disparity from a pair and sparse cues")
    p.add_argument("left")
    p.add_argument("right")
    p.add_argument("--cues", help="cue CSV (x,y,d) or sparse KITTI PNG / PFM")
    p.add_argument("--gt", help="ground-truth disparity for an evaluation report")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--format", choices=("pfm", "kitti_png"))
    _add_config_flags(p)
    common(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("expand", help="expand sparse cues into a guidance map")
    p.add_argument("image")
    p.add_argument("cues")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--dist-out", help="optional PFM of distances to the governing cue")
    p.add_argument("--format", choices=("pfm", "kitti_png"))
    p.add_argument("--tau", type=float, default=15.0)
    p.add_argument("--L", type=int, default=30, dest="arm_limit")
    p.add_argument("--region", choices=("cross", "square"), default="cross")
    p.add_argument("--anchor", choices=("arm", "center"), default="arm")
    common(p)
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("eval", help="compare a disparity map to ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--pred-format", choices=("pfm", "kitti_png", "csv"))
    p.add_argument("--gt-format", choices=("pfm", "kitti_png", "csv"))
    p.add_argument("--csv", help="write the report as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the enhancement ablation rows")
    p.add_argument("left")
    p.add_argument("right")
    p.add_argument("cues")
    p.add_argument("gt")
    p.add_argument("--csv")
    _add_config_flags(p)
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="error versus cue density on synthetic scenes")
    p.add_argument("--scene", action="append", help="scene config file (repeatable)")
    p.add_argument("--battery", type=int, default=0, help="add N seeded two-layer scenes")
    p.add_argument("--battery-seed", type=int, default=0)
    p.add_argument("--slant", type=float, default=0.2)
    p.add_argument("--noise", type=float, default=8.0)
    p.add_argument("--densities", default="0.03,0.01,0.005,0.001")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("-o", "--out", help="CSV output path")
    _add_config_flags(p)
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="render a synthetic pair from a scene config")
    p.add_argument("scene")
    p.add_argument("out_dir")
    p.add_argument("--cues", type=float, help="also sample cues at this pixel coverage")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (imgio.ImageFormatError, OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
