"""``outfitrec`` command line.

Exit codes::

    0  success
    1  unexpected internal error
    2  usage error or invalid query
    3  malformed input file or failed validation
    4  missing artifact (run the build step named in the message)
    5  colour-wheel hue undefined for an achromatic query
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import (
    DomainMismatchError,
    FeatureFileError,
    MissingArtifactError,
    OutfitRecError,
    QueryError,
    UndefinedHueError,
    ValidationError,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_MISSING = 4
EXIT_UNDEFINED_HUE = 5

log = logging.getLogger("outfitrec")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (_UsageError, QueryError)):
        return EXIT_USAGE
    if isinstance(exc, MissingArtifactError):
        return EXIT_MISSING
    if isinstance(exc, UndefinedHueError):
        return EXIT_UNDEFINED_HUE
    if isinstance(exc, (ValidationError, FeatureFileError, DomainMismatchError, OSError, UnicodeDecodeError)):
        return EXIT_INVALID
    return EXIT_INTERNAL


def build_parser():
    p = _Parser(prog="outfitrec", description="Colour, pattern and retrieval outfit recommendation.")
    p.add_argument("--config", help="pipeline config JSON; flags override its values")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--output-dir", help="artifact directory (default: config value or '.')")
    p.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    p.add_argument("--annotations", help="street-style annotation file")
    p.add_argument("--inventory", help="inventory catalog file")
    p.add_argument("--pixels", help="segmented pixel file")
    p.add_argument("--street-features", help="street-style feature store")
    p.add_argument("--inventory-features", help="inventory feature store")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate-synthetic", help="write a synthetic corpus with ground truth")
    g.add_argument("--images", type=int, default=1000)
    g.add_argument("--colors", type=int, default=16)
    g.add_argument("--items-per-color", type=int, default=3)
    g.add_argument("--feature-dim", type=int, default=32)
    g.add_argument("--queries", type=int, default=200)

    b = sub.add_parser("build-palettes", help="fit per-category colour palettes")
    b.add_argument("--palette-k", type=int)
    b.add_argument("--max-pixels", type=int, dest="max_palette_pixels")

    c = sub.add_parser("build-cooccur", help="build the six co-occurrence matrices")
    c.add_argument("--kind", choices=("color", "pattern", "all"), default="all")
    c.add_argument("--alpha", type=float)
    c.add_argument("--tau", type=float)
    c.add_argument("--shards", type=int, dest="n_shards")

    j = sub.add_parser("build-joint-table", help="build retrieval joint tables")
    j.add_argument("--retrieval-k", type=int)
    j.add_argument("--score-rule", choices=("product", "count"))
    j.add_argument("--tau", type=float)

    r = sub.add_parser("recommend", help="answer one query")
    r.add_argument("--query", required=True, help="query JSON file, or '-' for stdin")
    r.add_argument("--strategy", choices=("color_cooccur", "color_wheel", "pattern_cooccur", "retrieval_table"))
    r.add_argument("--mode", choices=("complementary", "triadic"))
    r.add_argument("--limit", type=int)
    r.add_argument("--top-k", type=int)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("task", choices=("segmentation", "detection", "classification"))
    e.add_argument("--predictions", required=True)
    e.add_argument("--ground-truth", required=True)
    e.add_argument("--iou-threshold", type=float, default=0.5)

    s = sub.add_parser("serve", help="serve recommendations over HTTP")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    return p


def load_config(args):
    from .pipeline import PipelineConfig

    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.command == "serve":
        from .service import config_from_env

        cfg = config_from_env(cfg)
    overrides = {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "annotations": args.annotations,
        "inventory": args.inventory,
        "pixels": args.pixels,
        "street_features": args.street_features,
        "inventory_features": args.inventory_features,
    }
    for name in ("palette_k", "max_palette_pixels", "alpha", "tau", "n_shards", "retrieval_k",
                 "score_rule", "host", "port"):
        overrides[name] = getattr(args, name, None)
    return cfg.override(**overrides)


def read_query(source):
    """Parse a query document; a ``{"query": ...}`` wrapper is unwrapped."""
    try:
        text = sys.stdin.read() if source == "-" else Path(source).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise QueryError(f"query file not found: {source}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise QueryError(f"query is not valid JSON: {exc.msg}") from None
    if isinstance(data, dict) and isinstance(data.get("query"), dict):
        data = data["query"]
    return data


def _emit(obj, out):
    out.write(json.dumps(obj, sort_keys=True, allow_nan=False) + "\n")


def _run(args, out):
    cfg = load_config(args)
    from . import pipeline

    if args.command == "generate-synthetic":
        from .synthetic import generate, write_corpus

        corpus = generate(n_images=args.images, n_colors=args.colors, items_per_color=args.items_per_color,
                          feature_dim=args.feature_dim, n_queries=args.queries, seed=cfg.seed)
        paths = write_corpus(corpus, cfg.out)
        _emit({k: str(v) for k, v in paths.items()}, out)
    elif args.command == "build-palettes":
        _emit(pipeline.build_palettes(cfg), out)
    elif args.command == "build-cooccur":
        kinds = ("color", "pattern") if args.kind == "all" else (args.kind,)
        _emit({k: pipeline.build_cooccur(cfg, k) for k in kinds}, out)
    elif args.command == "build-joint-table":
        _emit(pipeline.build_joint_tables(cfg), out)
    elif args.command == "recommend":
        from .recommend import dumps_recommendation
        from .service import answer

        data = read_query(args.query)
        if not isinstance(data, dict):
            raise QueryError("query must be a JSON object")
        for key in ("strategy", "mode", "limit", "top_k"):
            value = getattr(args, key)
            if value is not None:
                data[key] = value
        art = pipeline.load_artifacts(cfg)
        out.write(dumps_recommendation(answer(data, art)) + "\n")
    elif args.command == "eval":
        _emit(pipeline.run_eval(args.task, args.predictions, args.ground_truth, args.iou_threshold,
                                cfg.mask_margin), out)
    elif args.command == "serve":
        from .service import serve

        serve(cfg)
    return EXIT_OK


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        err.write(f"outfitrec: error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=err)
    logging.captureWarnings(True)
    try:
        return _run(args, out)
    except (OutfitRecError, OSError, UnicodeDecodeError) as exc:
        err.write(f"outfitrec: error: {exc}\n")
        return exit_code_for(exc)
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        err.write(f"outfitrec: internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
