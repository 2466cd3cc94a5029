"""Command line interface.

    xai-probe all --config cfg.json --out run1/
    xai-probe attack --model M --data D --out DIR --target 0 --step-eps 0.0039

Exit codes: 0 success, 2 usage, 3 data/config problem, 4 numeric failure.
The environment variable XAI_PROBE_SEED overrides the master seed.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import pipeline
from .config import load_config
from .errors import ConfigError, InputError, NumericError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _add_common(parser):
    parser.add_argument("--out", required=True, help="run directory")
    parser.add_argument("--config", help="JSON config file (defaults apply otherwise)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY.PATH=VALUE",
        help="override one config value (JSON-parsed); repeatable",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xai-probe",
        description=(
            "Generate localized adversarial examples with known attack "
            "regions, explain them with salience, guided backpropagation, "
            "and LIME, and score how well each explanation recovers the "
            "attacked region."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic dataset splits")
    _add_common(p)

    p = sub.add_parser("train", help="train the classifier on data/train")
    _add_common(p)
    p.add_argument("--data", help="dataset directory (default OUT/data)")

    p = sub.add_parser("attack", help="attack the largest regions of each image")
    _add_common(p)
    p.add_argument("--model", help="weight file (default OUT/model.json)")
    p.add_argument("--data", help="attack split directory (default OUT/data/attack)")
    p.add_argument("--target", type=int, help="target class index")
    p.add_argument("--step-eps", type=float, help="per-iteration step size")
    p.add_argument("--max-iters", type=int, help="iteration cap")
    p.add_argument("--patience", type=int, help="stall patience")
    p.add_argument("--regions", type=int, help="attack the m largest regions")
    p.add_argument("--jobs", type=int, default=os.cpu_count(), help="worker processes")

    p = sub.add_parser("explain", help="explain every Success record")
    _add_common(p)
    p.add_argument("--model", help="weight file (default OUT/model.json)")
    p.add_argument("--manifest", help="attacks directory (default OUT/attacks)")
    p.add_argument(
        "--method",
        choices=["salience", "guided", "lime", "all"],
        default="all",
        help="which explainer to run (per-method runs merge into the index)",
    )
    p.add_argument("--jobs", type=int, default=os.cpu_count(), help="worker processes")

    p = sub.add_parser("evaluate", help="score explanations against attack masks")
    _add_common(p)
    p.add_argument("--attacks", help="attacks directory (default OUT/attacks)")

    p = sub.add_parser("report", help="emit SVG curves, overlay panels, rank table")
    _add_common(p)
    p.add_argument("--example", help="record id to plot (default: first)")
    p.add_argument("--n", type=int, help="explanation size for the overlay")

    p = sub.add_parser("all", help="run every stage in order")
    _add_common(p)
    p.add_argument("--jobs", type=int, default=os.cpu_count(), help="worker processes")
    return parser


def _config_from_args(args) -> dict:
    cfg = load_config(args.config, args.overrides)
    env_seed = os.environ.get("XAI_PROBE_SEED")
    if env_seed is not None:
        try:
            cfg["master_seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"XAI_PROBE_SEED must be an integer: {env_seed!r}") from exc
    # stage flags override config values
    flag_map = {
        "target": ("attack", "target_label"),
        "step_eps": ("attack", "step_eps"),
        "max_iters": ("attack", "max_iters"),
        "patience": ("attack", "patience"),
        "regions": ("attack", "regions"),
    }
    for attr, (section, key) in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg[section][key] = value
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "gen-data":
            pipeline.stage_gen_data(cfg, args.out)
        elif args.command == "train":
            pipeline.stage_train(cfg, args.out, data_dir=args.data)
        elif args.command == "attack":
            pipeline.stage_attack(
                cfg, args.out, jobs=args.jobs, model_path=args.model,
                data_dir=args.data,
            )
        elif args.command == "explain":
            pipeline.stage_explain(
                cfg, args.out, jobs=args.jobs, model_path=args.model,
                attacks_dir=args.manifest, method=args.method,
            )
        elif args.command == "evaluate":
            pipeline.stage_evaluate(cfg, args.out, attacks_dir=args.attacks)
        elif args.command == "report":
            pipeline.stage_report(cfg, args.out, example_id=args.example, n=args.n)
        elif args.command == "all":
            pipeline.stage_all(cfg, args.out, jobs=args.jobs)
    except (ConfigError, InputError, FileNotFoundError) as exc:
        print(f"xai-probe: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"xai-probe: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
