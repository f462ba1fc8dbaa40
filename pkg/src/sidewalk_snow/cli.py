"""Command-line entry point: ``sidewalk-snow {build,classify,sweep,synth}``.

Exit codes:
    0  success (any verdict)
    1  usage error: bad flag values, missing paths, invalid manifest or spec
    2  pipeline failure: plane fit failed, empty model, no labeled queries,
       sidewalk does not project into a query
    3  I/O or file-format error
    4  query not registered in the augmented model
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import evaluation, sidewalk, synthetic
from .classify import ClassifyParams, EmptyProjection, QueryInput, UnregisteredQuery, classify, query_from_model
from .colmap import ColmapError, UnknownImage, parse_sparse_model
from .manifest import Manifest, ManifestError, load_manifest
from .masks import DimensionMismatch, IllegalLabelValue, MalformedPgm, encode_pgm, load_label_raster

EXIT_OK, EXIT_USAGE, EXIT_PIPELINE, EXIT_IO, EXIT_UNREGISTERED = 0, 1, 2, 3, 4

log = logging.getLogger("sidewalk_snow")


class UsageError(Exception):
    pass


class NoLabeledQueries(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _unit_interval(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _nonneg_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _existing(path: str, kind: str = "file") -> Path:
    p = Path(path)
    ok = p.is_dir() if kind == "dir" else p.is_file()
    if not ok:
        raise UsageError(f"{kind} not found: {path}")
    return p


def _manifest(path: str) -> Manifest:
    return load_manifest(_existing(path))


def _query_input(aug, manifest: Manifest, name: str) -> QueryInput:
    try:
        entry = manifest.entry(name)
    except ManifestError as exc:
        raise UsageError(str(exc)) from None
    return query_from_model(aug, name, entry.gps, load_label_raster(entry.raster))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_build(args) -> int:
    model_dir = _existing(args.model_dir, "dir")
    manifest = _manifest(args.manifest)
    params = sidewalk.BuildParams(
        seed=args.seed, plane_threshold=args.plane_threshold, stride=args.stride, keep_side=args.keep_side
    )
    sparse = parse_sparse_model(model_dir)
    rasters = {e.name: load_label_raster(e.raster) for e in manifest.references}
    model = sidewalk.build_sidewalk_model(sparse, rasters, manifest.scene, params)
    sidewalk.save_model(model, args.out)
    for name, count in model.source_counts.items():
        print(f"{name} {count}")
    contributing = sum(1 for c in model.source_counts.values() if c > 0)
    print(f"total {len(model.points)} points from {contributing}/{len(model.source_counts)} images")
    return EXIT_OK


def cmd_classify(args) -> int:
    model = sidewalk.load_model(_existing(args.model))
    aug_dir = _existing(args.aug_model_dir, "dir")
    manifest = _manifest(args.manifest)
    aug = parse_sparse_model(aug_dir)
    query = _query_input(aug, manifest, args.query)
    params = ClassifyParams(splat_radius=args.splat_radius, min_snow_fraction=args.min_snow_fraction)
    verdict = classify(model, query, args.threshold, params, overlay=args.overlay_out is not None)
    coverage = "-" if verdict.coverage is None else f"{verdict.coverage:.4f}"
    print(f"{verdict.name} {verdict.outcome.value} {coverage} {verdict.threshold:.2f}")
    if args.overlay_out is not None:
        if verdict.overlay is None:
            log.warning("no overlay for %s: query is outside the scene", verdict.name)
        else:
            Path(args.overlay_out).write_bytes(encode_pgm(verdict.overlay))
    return EXIT_OK


def cmd_sweep(args) -> int:
    if len(args.aug_model_dir) != len(args.manifest):
        raise UsageError("give one --aug-model-dir per --manifest")
    models = {}
    for path in args.model:
        m = sidewalk.load_model(_existing(path))
        models[m.scene.scene_id] = m
    labeled = []
    for aug_path, man_path in zip(args.aug_model_dir, args.manifest):
        aug_dir = _existing(aug_path, "dir")
        manifest = _manifest(man_path)
        entries = [e for e in manifest.queries if e.category is not None]
        if entries and manifest.scene.scene_id not in models:
            raise UsageError(f"no --model given for scene {manifest.scene.scene_id!r}")
        aug = parse_sparse_model(aug_dir) if entries else None
        for e in entries:
            q = query_from_model(aug, e.name, e.gps, load_label_raster(e.raster))
            labeled.append(evaluation.LabeledQuery(q, evaluation.QueryCategory(e.category), manifest.scene.scene_id))
    if not labeled:
        raise NoLabeledQueries("no query in the manifests carries a category label")
    try:
        evaluation.threshold_grid(args.t_min, args.t_max, args.step)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    params = ClassifyParams(splat_radius=args.splat_radius, min_snow_fraction=args.min_snow_fraction)
    result = evaluation.sweep(models, labeled, args.t_min, args.t_max, args.step, params)
    evaluation.emit_report(result, args.report)
    try:
        lo, hi = evaluation.optimal_band(result, args.floor)
    except evaluation.NoBand:
        print("no band")
    else:
        print(f"band {lo:.2f} {hi:.2f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = synthetic.SceneSpec.load(_existing(args.spec)) if args.spec else synthetic.SceneSpec()
    bundle = synthetic.generate(spec)
    out = synthetic.write_bundle(bundle, args.out_dir)
    for name in bundle.query_names:
        print(f"{name} {synthetic.true_coverage(bundle, name):.4f}")
    print(f"wrote {len(bundle.rasters)} images to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sidewalk-snow", description="Detect snow-covered sidewalks from street imagery.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", help="learn expected sidewalk locations from clear-weather images")
    p.add_argument("--model-dir", required=True, help="sparse text model of the reference images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="sidewalk model file to write")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--plane-threshold", type=_positive_float, default=None, help="default: 1%% of the bbox diagonal")
    p.add_argument("--stride", type=_positive_int, default=2)
    p.add_argument("--keep-side", choices=("right", "left"), default="right")
    p.set_defaults(func=cmd_build)

    def classify_flags(p):
        p.add_argument("--splat-radius", type=_nonneg_float, default=None, help="pixels; default 2 at 1920 wide")
        p.add_argument("--min-snow-fraction", type=_unit_interval, default=0.0)

    p = sub.add_parser("classify", help="classify one query image")
    p.add_argument("--model", required=True, help="sidewalk model file")
    p.add_argument("--aug-model-dir", required=True, help="sparse model with the query registered")
    p.add_argument("--manifest", required=True)
    p.add_argument("--query", required=True, help="query image name")
    p.add_argument("--threshold", type=_unit_interval, default=0.60)
    p.add_argument("--overlay-out", default=None, help="write a PGM overlay here")
    classify_flags(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("sweep", help="score labeled queries over a threshold grid")
    p.add_argument("--model", required=True, action="append", help="sidewalk model file (repeatable)")
    p.add_argument("--aug-model-dir", required=True, action="append", help="one per --manifest")
    p.add_argument("--manifest", required=True, action="append")
    p.add_argument("--t-min", type=_unit_interval, default=0.0)
    p.add_argument("--t-max", type=_unit_interval, default=0.95)
    p.add_argument("--step", type=_positive_float, default=0.05)
    p.add_argument("--floor", type=float, default=100.0, help="minimum accuracy %% for the band")
    p.add_argument("--report", required=True, help="CSV file to write")
    classify_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a synthetic scene bundle")
    p.add_argument("--spec", default=None, help="JSON scene spec; default spec when omitted")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    """Run one command and return its exit code (usage errors and ``--help`` included)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ManifestError, synthetic.InvalidSpec) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnregisteredQuery as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNREGISTERED
    except (sidewalk.SidewalkModelError, EmptyProjection, NoLabeledQueries, evaluation.UnknownScene) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (
        OSError,
        ColmapError,
        UnknownImage,
        MalformedPgm,
        IllegalLabelValue,
        DimensionMismatch,
        sidewalk.ModelFileError,
        ValueError,
        KeyError,
    ) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
