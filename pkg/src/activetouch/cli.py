"""Command line entry point: ``activetouch {train,recognize,compare}``.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or invalid
mesh, model or config files, unknown objects, training failures).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .contact_sim import MeshError
from .harness import (
    ConfigError,
    ExperimentConfig,
    UnknownObjectError,
    cmd_compare,
    cmd_recognize,
    cmd_train,
    load_config,
    resolve_config,
)
from .model import ModelFileError, TrainingError
from .planner import POLICIES, EpisodeError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON); defaults to the built-in experiment")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--horizon", type=int, help="planning horizon T")
    common.add_argument("--sims", type=int, help="simulations per tree search")
    common.add_argument("--lambda", dest="lam", type=float, help="movement vs. recognition weight")
    common.add_argument("--c", type=float, help="UCT exploration weight")
    common.add_argument("--max-iterations", type=int, help="iteration cap per episode")
    common.add_argument("--workers", type=int, help="parallel worker processes for compare")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="activetouch", description="Active touch-only object recognition with MCTS.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train a model file from the config's objects")
    t.add_argument("--model", help="model file to write (default <out>/model.json)")

    r = sub.add_parser("recognize", parents=[common], help="run one recognition episode")
    r.add_argument("--model", help="model file (default <out>/model.json)")
    r.add_argument("--object", dest="object_id", help="label of a trained object to recognize")
    r.add_argument("--mesh", help="held-out OBJ mesh to recognize instead")
    r.add_argument("--policy", choices=POLICIES)
    r.add_argument("--seed", type=int)
    r.add_argument("--timing", action="store_true", help="include wall-clock times in the episode log")

    c = sub.add_parser("compare", parents=[common], help="compare policies over all objects and seeds")
    c.add_argument("--model", help="model file (default <out>/model.json)")
    c.add_argument("--policy", action="append", choices=POLICIES,
                   help="policy to include; repeat for each (default: the config's list)")
    c.add_argument("--seed", type=int, help="first seed")
    c.add_argument("--seeds", type=int, help="number of consecutive seeds")
    c.add_argument("--timing", action="store_true", help="add wall-clock times to the iteration table")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else None
    if cfg is None and args.command != "train":
        model = args.model or f"{args.out or ExperimentConfig.out}/model.json"
        cfg = resolve_config(None, model)
    cfg = cfg or ExperimentConfig()
    changes = {}
    for flag, key in (("horizon", "horizon"), ("sims", "simulations"), ("lam", "lam"), ("c", "c"),
                      ("max_iterations", "max_iterations")):
        v = getattr(args, flag, None)
        if v is not None:
            changes[key] = v
    if args.out is not None:
        changes["out"] = args.out
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.command == "compare" and (args.seed is not None or args.seeds is not None):
        first = args.seed if args.seed is not None else cfg.seeds[0]
        changes["seeds"] = tuple(range(first, first + (args.seeds or len(cfg.seeds))))
    try:
        return cfg.replace(**changes)
    except ValueError as exc:
        # bad flag values, as opposed to a bad config file
        raise UsageError(str(exc)) from exc


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _config(args)
        model = getattr(args, "model", None) or f"{cfg.out}/model.json"
        if args.command == "train":
            cmd_train(cfg, model)
        elif args.command == "recognize":
            if args.object_id is None and args.mesh is None:
                raise UsageError("recognize needs --object or --mesh")
            cmd_recognize(cfg, model, args.object_id, args.mesh, args.policy, args.seed, args.timing)
        else:
            policies = args.policy or cfg.policies
            if len(policies) < 2:
                raise UsageError("compare needs >=2 policies")
            cmd_compare(cfg, model, policies, args.timing)
    except UsageError as exc:
        print(f"activetouch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ModelFileError, MeshError, TrainingError, EpisodeError,
            UnknownObjectError, OSError) as exc:
        print(f"activetouch: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
