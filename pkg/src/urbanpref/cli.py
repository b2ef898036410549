"""Command line entry point.

Exit codes: 0 success, 2 config error, 3 missing upstream artifact.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, PipelineConfig, desk_config, load_config


def build_parser() -> argparse.ArgumentParser:
    # shared flags, accepted both before and after the subcommand; SUPPRESS
    # keeps a flag given in one position from being reset by the other
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", type=Path, default=argparse.SUPPRESS, help="INI config; defaults to the built-in desk profile"
    )
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="artifact directory (overrides config)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (overrides config)")

    parser = argparse.ArgumentParser(
        prog="urbanpref",
        description="Learn a rater's urban preferences from paired images and map them per city.",
        parents=[common],
    )
    parser.set_defaults(config=None, out=None, seed=None)
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    cmd("synth", "generate the synthetic image corpus")
    cmd("grid", "report per-city grid shape and image counts")
    cmd("extract", "compute image descriptors for both domains")
    cmd("embed", "2-D embedding of street-level descriptors")
    cmd("som", "train the structure lattice")
    cmd("clusters", "two-level clustering and representative picks")

    serve = cmd("survey-serve", "serve the pairwise survey over HTTP")
    serve.add_argument("--port", type=int, default=None, help="listen port (default from config, 8787)")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--static", type=Path, default=None, help="directory of UI assets to serve at /")

    labels = cmd("labels", "derive liked/disliked labels from the vote log")
    labels.add_argument("--synthetic-rater", action="store_true", help="vote any open pairs with the synthetic rater")

    cmd("train", "train the street-level preference classifier")
    cmd("adapt", "transfer labels to overhead images and train that domain")
    cmd("atlas", "render generic and preference pixel maps")
    cmd("similarity", "lay out cities by map similarity")

    run = cmd("run-all", "run every stage in order")
    run.add_argument("--synthetic-rater", action="store_true", help="answer the survey with the synthetic rater")

    cmd("verify", "check artifact hashes against provenance.json")
    return parser


def _load(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config is not None else desk_config(out=Path("out"))
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _serve(cfg: PipelineConfig, args) -> int:
    import uvicorn

    from .service import create_app

    pipeline.ensure_schedule(cfg)
    app = create_app(cfg.out, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port if args.port is not None else cfg.port, log_level="info")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "run-all":
            pipeline.run_all(cfg, synthetic_rater=args.synthetic_rater)
        elif args.command == "labels":
            pipeline.stage_labels(cfg, synthetic_rater=args.synthetic_rater)
        elif args.command == "survey-serve":
            return _serve(cfg, args)
        elif args.command == "verify":
            problems = pipeline.verify_tree(cfg)
            for p in problems:
                print(p, file=sys.stderr)
            if problems:
                return 1
            print(f"{cfg.out}: all recorded artifacts match, fingerprint {cfg.fingerprint()[:12]}..")
        else:
            getattr(pipeline, f"stage_{args.command}")(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except pipeline.DependencyError as e:
        print(f"dependency error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
