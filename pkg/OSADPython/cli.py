# -*- coding: utf-8 -*-
"""
Command line interface:

    osad gen-data --out DIR --episodes N --seed S
    osad train    [--config FILE] [--data DIR] --fold {1,2,3} --out CKPT
    osad eval     --ckpt CKPT [--data DIR] --fold {1,2,3} --report FILE
    osad predict  --ckpt CKPT --support IMG --support-ann JSON --queries IMG [IMG ...] --out DIR

Without --data the synthetic episode generator is used. Exit codes: 0 success, 1 usage / configuration error,
2 data validation error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import pathlib
import sys
from typing import NoReturn, Optional, Sequence

import numpy as np

from OSADPython.checkpoint import (
    load_checkpoint,
    save_checkpoint,
)
from OSADPython.config import (
    TrainConfig,
    TrainerError,
)
from OSADPython.episodes_abc import (
    DEFAULT_FOLDS,
    EpisodeError,
    EpisodeSourceABC,
    kfold_split,
)
from OSADPython.episodes_pad import (
    PADEpisodeSource,
    load_pad_dir,
    write_episode,
    write_metadata,
)
from OSADPython.episodes_synthetic import (
    FAMILIES,
    FAMILY_NAMES,
    SyntheticEpisodeSource,
    generate_synthetic,
)
from OSADPython.osad_module_abc import (
    OSADModelError,
)
from OSADPython.trainer import (
    DivergenceError,
    Trainer,
    evaluate,
    evaluate_baseline,
    predict,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3


class UsageError(Exception):
    """
    Invalid command line.
    """


class OSADArgumentParser(argparse.ArgumentParser):
    """
    Argument parser raising UsageError instead of exiting with argparse's own status code.
    """

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _source(data: Optional[str], config: TrainConfig) -> EpisodeSourceABC:
    if data is None:
        return SyntheticEpisodeSource(negative_query_rate=config.negative_query_rate)
    return PADEpisodeSource(load_pad_dir(data), input_size=config.input_shape())


def cmd_gen_data(args: argparse.Namespace) -> int:
    out = pathlib.Path(args.out)
    if args.episodes < 1:
        raise UsageError(f"--episodes must be positive, got {args.episodes}")

    split = kfold_split(FAMILIES, k=DEFAULT_FOLDS, seed=args.seed)
    write_metadata(out, categories=FAMILY_NAMES, split=split)
    for index in range(args.episodes):
        affordance_id = FAMILIES[index % len(FAMILIES)]
        episode_seed = int(np.random.default_rng([args.seed, 17, index]).integers(2 ** 31 - 1))
        episode = generate_synthetic(seed=episode_seed, affordance_id=affordance_id, n=args.n_queries)
        write_episode(out, episode, index=index)
    logger.info("Wrote %d synthetic episodes to %s", args.episodes, out.as_posix())
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    overrides = {"fold_id": args.fold}
    if args.steps is not None:
        overrides["steps"] = args.steps
    config = dataclasses.replace(config, **overrides)
    source = _source(args.data, config)

    trainer = Trainer(config=config, source=source)
    result = trainer.train()
    save_checkpoint(args.out, result.checkpoint)
    if args.trace:
        result.write_trace(args.trace)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    config = TrainConfig.from_dict(checkpoint.config)
    source = _source(args.data, config)

    report = evaluate(
        checkpoint=checkpoint,
        source=source,
        fold=args.fold,
        n_episodes=args.episodes,
        n_queries=args.n_queries,
        num_workers=args.workers,
    )
    report.write(args.report)

    if args.baseline:
        split = source.default_split(k=config.num_folds, seed=config.seed)
        baseline = evaluate_baseline(
            source=source,
            split=split,
            fold=args.fold,
            config=dataclasses.replace(config, n_queries=args.n_queries or config.n_queries),
            n_episodes=args.episodes,
            num_workers=args.workers,
        )
        baseline.write(args.baseline)
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    predict(
        checkpoint=checkpoint,
        support_image=args.support,
        support_annotation=args.support_ann,
        query_images=args.queries,
        out_dir=args.out,
    )
    return EXIT_OK


def build_parser() -> OSADArgumentParser:
    parser = OSADArgumentParser(prog="osad", description="One-shot affordance detection")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=OSADArgumentParser)

    gen = sub.add_parser("gen-data", help="write synthetic episodes in the PAD-style layout")
    gen.add_argument("--out", required=True)
    gen.add_argument("--episodes", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n-queries", type=int, default=5)
    gen.set_defaults(func=cmd_gen_data)

    trn = sub.add_parser("train", help="episodic training")
    trn.add_argument("--config")
    trn.add_argument("--data")
    trn.add_argument("--fold", type=int, choices=[1, 2, 3], required=True)
    trn.add_argument("--out", required=True)
    trn.add_argument("--steps", type=int)
    trn.add_argument("--trace", help="write the loss trace (line delimited JSON)")
    trn.set_defaults(func=cmd_train)

    evl = sub.add_parser("eval", help="evaluate a checkpoint on the test categories of a fold")
    evl.add_argument("--ckpt", required=True)
    evl.add_argument("--data")
    evl.add_argument("--fold", type=int, choices=[1, 2, 3], required=True)
    evl.add_argument("--report", required=True)
    evl.add_argument("--episodes", type=int)
    evl.add_argument("--n-queries", type=int)
    evl.add_argument("--workers", type=int)
    evl.add_argument("--baseline", help="also write the all-foreground baseline report to this file")
    evl.set_defaults(func=cmd_eval)

    prd = sub.add_parser("predict", help="write affordance masks for query images")
    prd.add_argument("--ckpt", required=True)
    prd.add_argument("--support", required=True)
    prd.add_argument("--support-ann", required=True)
    prd.add_argument("--queries", nargs="+", required=True)
    prd.add_argument("--out", required=True)
    prd.set_defaults(func=cmd_predict)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as ex:
        sys.stderr.write(f"{ex}\n")
        return EXIT_USAGE

    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        return args.func(args)
    except DivergenceError as ex:
        logger.error("Training diverged: %s", ex)
        return EXIT_DIVERGENCE
    except EpisodeError as ex:
        logger.error("%s", ex)
        return EXIT_DATA
    except (UsageError, TrainerError, OSADModelError) as ex:
        logger.error("%s", ex)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
