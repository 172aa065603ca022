"""pcclean command line: data generation, training, cleaning, evaluation, timing.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, checkpoint, data, denoiser, detector, metrics
from .cloud_io import CloudFormatError, read_cloud, write_cloud
from .geometry import EmptyCloudError, PointCloud
from .network import GraphConvVariant, Model, ModelConfig
from .training import PRESETS, TrainConfig, format_loss_log

log = logging.getLogger("pcclean")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

# built-in defaults, used when neither a flag nor the config file sets a value
DEFAULTS = {
    "shape": "icosahedron",
    "points": 10000,
    "seed": 0,
    "noise_level": 0.01,
    "outlier_fraction": 0.0,
    "min_distance": 0.015,
    "min_distance_unit": "diagonal",
    "k": 16,
    "variant": "ours1",
    "model_size": "full",
    "threshold": detector.DEFAULT_THRESHOLD,
    "alpha": denoiser.DEFAULT_ALPHA,
    "batch_size": 16,
    "preset": "paper-hyper",
    "repeat": 1,
    "repetitions": 5,
    "bench_points": 128,
    "init_seed": 0,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- argument handling --------------------------------------------------------------

def _add(p, *names, **kw):
    kw.setdefault("default", None)
    p.add_argument(*names, **kw)


def _common(p):
    _add(p, "--config", help="JSON file of option values (flags take precedence)")
    _add(p, "--seed", type=int)
    _add(p, "-v", "--verbose", action="store_true", default=False)


def _model_opts(p):
    _add(p, "--k", type=int, help="neighbors per graph node")
    _add(p, "--variant", choices=["ours1", "ours2"], help="ours1 = dynamic graph, ours2 = fixed 3-D graph")
    _add(p, "--model-size", choices=["full", "desk"])
    _add(p, "--patch-points", type=int)
    _add(p, "--patch-radius", type=float, help="patch radius as a fraction of the bbox diagonal")


def _train_opts(p):
    _model_opts(p)
    _add(p, "--preset", choices=sorted(PRESETS))
    _add(p, "--lr", type=float)
    _add(p, "--epochs", type=int)
    _add(p, "--batch-size", type=int)
    _add(p, "--init-seed", type=int)
    _add(p, "--patches-per-cloud", type=int)
    _add(p, "--manifest", help="JSON manifest listing clean/contaminated pairs")
    _add(p, "--checkpoint", required=True, help="checkpoint file to write")
    _add(p, "--loss-log", help="write epoch,mean_loss lines here")


def build_parser():
    parser = _Parser(prog="pcclean", description="Point cloud outlier removal and denoising.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="sample a synthetic shape")
    _common(p)
    _add(p, "--shape", choices=data.SHAPES)
    _add(p, "--points", type=int)
    _add(p, "--output", required=True)

    p = sub.add_parser("contaminate", help="add noise and outliers to a clean cloud")
    _common(p)
    _add(p, "--input", required=True)
    _add(p, "--output", required=True)
    _add(p, "--noise-level", type=float, help="noise std as a fraction of the bbox diagonal")
    _add(p, "--outlier-fraction", type=float)
    _add(p, "--min-distance", type=float, help="minimum outlier distance from the surface")
    _add(p, "--min-distance-unit", choices=["diagonal", "sigma"])
    _add(p, "--shape", choices=data.SHAPES, help="exact surface for the outlier distance test")
    _add(p, "--manifest", help="append a clean/contaminated entry to this manifest")

    p = sub.add_parser("train-detector", help="train the outlier detector")
    _common(p)
    _train_opts(p)
    _add(p, "--input", nargs="+", help="labelled contaminated clouds (.ply with outlier flags)")

    p = sub.add_parser("train-denoiser", help="train the denoiser")
    _common(p)
    _train_opts(p)
    _add(p, "--alpha", type=float)
    _add(p, "--input", nargs="+", help="contaminated clouds")
    _add(p, "--reference", nargs="+", help="clean clouds, row-aligned with --input")

    p = sub.add_parser("clean", help="remove outliers, then denoise")
    _common(p)
    _add(p, "--input", required=True)
    _add(p, "--output", required=True)
    _add(p, "--checkpoint", action="append", help="detector and/or denoiser checkpoint (repeatable)")
    _add(p, "--threshold", type=float)
    _add(p, "--k", type=int)
    _add(p, "--variant", choices=["ours1", "ours2"])
    _add(p, "--reference", help="clean cloud for a Chamfer distance in the summary")
    _add(p, "--skip-detect", action="store_true", default=False)
    _add(p, "--repeat", type=int, help="denoising passes")
    _add(p, "--summary", help="write the summary here instead of stdout")

    p = sub.add_parser("eval", help="Chamfer distance and detection precision-recall")
    _common(p)
    _add(p, "--input", required=True)
    _add(p, "--reference", help="clean cloud for the Chamfer distance")
    _add(p, "--checkpoint", help="detector checkpoint; with labelled input adds AUPR")
    _add(p, "--variant", choices=["ours1", "ours2"])
    _add(p, "--threshold", type=float)
    _add(p, "--output", help="report file (default stdout)")
    _add(p, "--pr-csv", help="write the precision-recall curve here")

    p = sub.add_parser("bench", help="per-point inference time of both graph-conv variants")
    _common(p)
    _model_opts(p)
    _add(p, "--input", required=True)
    _add(p, "--checkpoint", action="append", help="checkpoint(s) to time; default: fresh models")
    _add(p, "--bench-points", type=int, help="number of patches to time")
    _add(p, "--repetitions", type=int)
    _add(p, "--init-seed", type=int)
    _add(p, "--output", help="report file (default stdout)")
    return parser


def load_config_file(path):
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed config file {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def resolve(args):
    """Fill unset options: flags > config file > built-in defaults."""
    values = vars(args)
    if args.config:
        for key, val in load_config_file(args.config).items():
            if key in ("command", "config"):
                continue
            if key not in values:
                raise UsageError(f"unknown option {key!r} in config file for {args.command}")
            if values[key] is None:
                values[key] = val
    # a loaded checkpoint carries its own k and variant
    keep_unset = ("k", "variant") if values.get("checkpoint") and args.command != "train-detector" \
        and args.command != "train-denoiser" else ()
    for key, val in DEFAULTS.items():
        if key in values and values[key] is None and key not in keep_unset:
            values[key] = val
    return args


def model_config(args, kind):
    size = args.model_size
    base = ModelConfig.desk() if size == "desk" else ModelConfig()
    changes = {"k": args.k, "variant": GraphConvVariant.parse(args.variant),
               "out_dim": 1 if kind == "detector" else 3}
    if args.patch_points is not None:
        changes["patch_points"] = args.patch_points
    if args.patch_radius is not None:
        changes["patch_radius"] = args.patch_radius
    try:
        return base.with_(**changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def train_config(args, kind):
    over = {"batch_size": args.batch_size, "seed": args.seed}
    if args.lr is not None:
        over["lr"] = args.lr
    if args.epochs is not None:
        over["epochs"] = args.epochs
    try:
        return TrainConfig.preset(args.preset, kind, **over)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# --- helpers --------------------------------------------------------------------

def _read(path):
    if not Path(path).exists():
        raise DataError(f"file not found: {path}")
    return read_cloud(path)


def _load_model(path):
    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    return Model.load(path)


def _write_text(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _pairs_from_args(args, need_clean):
    """(contaminated, clean or None) cloud pairs from --manifest or --input/--reference."""
    out = []
    if args.manifest:
        if not Path(args.manifest).exists():
            raise DataError(f"manifest not found: {args.manifest}")
        try:
            entries = data.read_manifest(args.manifest)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        for e in entries:
            out.append((_read(e.contaminated), _read(e.clean) if need_clean else None))
    inputs = args.input or []
    refs = getattr(args, "reference", None) or []
    if need_clean and len(refs) != len(inputs):
        raise UsageError(f"{len(inputs)} --input clouds but {len(refs)} --reference clouds")
    for i, path in enumerate(inputs):
        out.append((_read(path), _read(refs[i]) if need_clean else None))
    if not out:
        raise UsageError("no training data: give --input or --manifest")
    return out


def _model_meta(args, history):
    return {"preset": args.preset, "seed": args.seed, "init_seed": args.init_seed,
            "final_loss": history[-1][1] if history else None}


# --- commands ----------------------------------------------------------------

def cmd_generate(args):
    if args.points < 1:
        raise UsageError("--points must be positive")
    cloud = data.generate_shape(args.shape, args.points, seed=args.seed)
    write_cloud(cloud, args.output)
    log.info("wrote %d points to %s", len(cloud), args.output)
    return EXIT_OK


def cmd_contaminate(args):
    clean = _read(args.input)
    try:
        spec = data.ContaminationSpec(noise_level=args.noise_level, outlier_fraction=args.outlier_fraction,
                                      outlier_min_distance=args.min_distance, seed=args.seed,
                                      min_distance_unit=args.min_distance_unit)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    surface = data.make_shape(args.shape) if args.shape else None
    pair = data.contaminate(clean, spec, surface)
    write_cloud(pair.contaminated, args.output)
    if args.manifest:
        mpath = Path(args.manifest)
        entries = data.read_manifest(mpath) if mpath.exists() else []
        base = mpath.parent.resolve()
        for e in entries:  # back to manifest-relative paths
            e.clean = _relpath(e.clean, base)
            e.contaminated = _relpath(e.contaminated, base)
        entries.append(data.ManifestEntry(_relpath(args.input, base), _relpath(args.output, base),
                                          spec, args.shape))
        data.write_manifest(mpath, entries)
    return EXIT_OK


def _relpath(path, base):
    return os.path.relpath(Path(path).resolve(), base)


def cmd_train_detector(args):
    config = model_config(args, "detector")
    hyper = train_config(args, "detector")
    clouds = [c for c, _ in _pairs_from_args(args, need_clean=False)]
    for c in clouds:
        if c.labels is None:
            raise DataError("detector training needs outlier labels (write clouds as .ply via contaminate)")
    ds = detector.detector_dataset(clouds, config, args.patches_per_cloud, seed=args.seed)
    model, history = detector.train_detector(ds, config, hyper, init_seed=args.init_seed)
    model.save(args.checkpoint, _model_meta(args, history))
    if args.loss_log:
        Path(args.loss_log).write_text(format_loss_log(history))
    return EXIT_OK


def cmd_train_denoiser(args):
    config = model_config(args, "denoiser")
    hyper = train_config(args, "denoiser")
    if not 0 <= args.alpha <= 1:
        raise UsageError("--alpha must be in [0, 1]")
    pairs = []
    for noisy, clean in _pairs_from_args(args, need_clean=True):
        if len(noisy) != len(clean):
            raise DataError(f"unpaired data: {len(noisy)} contaminated vs {len(clean)} clean points")
        labels = noisy.labels if noisy.labels is not None else np.zeros(len(noisy), np.int8)
        pairs.append(data.PairedCloud(clean, noisy, np.arange(len(noisy)), labels))
    ds = denoiser.denoiser_dataset(pairs, config, args.patches_per_cloud, seed=args.seed)
    model, history = denoiser.train_denoiser(ds, config, hyper, alpha=args.alpha, init_seed=args.init_seed)
    model.save(args.checkpoint, _model_meta(args, history))
    if args.loss_log:
        Path(args.loss_log).write_text(format_loss_log(history))
    return EXIT_OK


def _override(model, args):
    changes = {}
    if getattr(args, "variant", None) is not None:
        changes["variant"] = GraphConvVariant.parse(args.variant)
    if getattr(args, "k", None) is not None:
        changes["k"] = args.k
    if not changes:
        return model
    try:
        return Model(model.kind, model.config.with_(**changes), model.params)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _models_by_kind(paths, args):
    found = {}
    for path in paths or []:
        m = _override(_load_model(path), args)
        if m.kind in found:
            raise UsageError(f"two {m.kind} checkpoints given")
        found[m.kind] = m
    return found


def cmd_clean(args):
    if not 0 <= args.threshold <= 1:
        raise UsageError("--threshold must be in [0, 1]")
    if args.repeat < 0:
        raise UsageError("--repeat must be >= 0")
    models = _models_by_kind(args.checkpoint, args)
    if not args.skip_detect and "detector" not in models:
        raise UsageError("clean needs a detector checkpoint (or --skip-detect)")
    cloud = _read(args.input)
    cloud.require_nonempty("input cloud")
    summary = {"points_in": len(cloud)}
    kept = cloud
    if not args.skip_detect:
        decision = detector.classify_outliers(cloud, models["detector"], args.threshold, seed=args.seed)
        kept = detector.remove_outliers(cloud, decision)
        summary["outliers_removed"] = int(decision.is_outlier.sum())
        if len(kept) == 0:
            raise DataError("every point was classified as an outlier; nothing left to denoise")
    if "denoiser" in models and args.repeat > 0:
        kept = denoiser.apply_denoise(kept, models["denoiser"], seed=args.seed, passes=args.repeat)
    summary["points_out"] = len(kept)
    out = PointCloud(kept.points)
    write_cloud(out, args.output)
    if args.reference:
        ref = _read(args.reference)
        summary["chamfer_input"] = metrics.chamfer_distance(cloud, ref)
        summary["chamfer_output"] = metrics.chamfer_distance(out, ref)
    _write_text(args.summary, metrics.format_report(summary))
    return EXIT_OK


def cmd_eval(args):
    cloud = _read(args.input)
    report = {"points": len(cloud)}
    if args.reference:
        report["chamfer_distance"] = metrics.chamfer_distance(cloud, _read(args.reference))
    if args.checkpoint:
        model = _override(_load_model(args.checkpoint), args)
        if model.kind != "detector":
            raise UsageError("eval --checkpoint expects a detector")
        if cloud.labels is None:
            raise DataError("AUPR needs outlier labels in the input cloud")
        probs = detector.outlier_probabilities(cloud, model, seed=args.seed)
        curve = metrics.pr_curve(probs, cloud.labels)
        flags = detector.decide(probs, args.threshold).is_outlier
        labels = cloud.labels.astype(bool)
        report["aupr"] = curve.average_precision()
        report["prevalence"] = float(labels.mean())
        report["outlier_recall"] = float(flags[labels].mean())
        report["clean_flagged"] = float(flags[~labels].mean()) if (~labels).any() else 0.0
        if args.pr_csv:
            Path(args.pr_csv).write_text(curve.to_csv())
    elif args.pr_csv:
        raise UsageError("--pr-csv needs a detector --checkpoint")
    if len(report) == 1:
        raise UsageError("nothing to evaluate: give --reference and/or --checkpoint")
    _write_text(args.output, metrics.format_report(report))
    return EXIT_OK


def cmd_bench(args):
    cloud = _read(args.input)
    if args.checkpoint:
        models = list(_models_by_kind(args.checkpoint, args).values())
    else:
        models = [Model.create(kind, model_config(args, kind), seed=args.init_seed)
                  for kind in ("detector", "denoiser")]
    if args.repetitions < 3:
        raise UsageError("--repetitions must be at least 3")
    report = dict(bench.machine_info())
    report["context"] = "single process, sequential patch batches"
    for model in models:
        res = bench.compare_variants(model, cloud, args.repetitions, args.bench_points, seed=args.seed)
        for tag, r in res.items():
            report[f"{model.kind}.{tag}.points"] = r.points
            report[f"{model.kind}.{tag}.seconds_per_point"] = r.seconds_per_point
        report[f"{model.kind}.ratio_ours2_over_ours1"] = (
            res["ours2"].seconds_per_point / res["ours1"].seconds_per_point)
    _write_text(args.output, metrics.format_report(report))
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "contaminate": cmd_contaminate,
    "train-detector": cmd_train_detector,
    "train-denoiser": cmd_train_denoiser,
    "clean": cmd_clean,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        args = resolve(args)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CloudFormatError, checkpoint.CheckpointError, EmptyCloudError,
            data.ContaminationError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
