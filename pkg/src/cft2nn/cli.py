"""Command-line entry point: featurize, train, predict, verify-coverage, info."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from ._accel import backend
from .config import ExperimentConfig, load_config, parse_value
from .errors import CFT2NNError, ConfigError

log = logging.getLogger("cft2nn")

EXIT_COVERAGE_FAIL = 6

# Shorthand flags for the most common overrides.
SHORTCUTS = {
    "alpha": "conformal.alpha",
    "k_nn": "conformal.k_nn",
    "measure": "conformal.measure",
    "resolution": "topology.resolution",
    "epochs": "model.epochs",
    "dataset": "dataset.name",
    "data_root": "dataset.root",
    "output_dir": "output_dir",
    "workers": "workers",
}


def _config_args(p):
    p.add_argument("-c", "--config", help="JSON or YAML experiment config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. model.ttl_lowrank=cp (repeatable)")
    p.add_argument("--cache-dir", help="feature cache directory (default: $CFT2NN_CACHE_DIR or ./cache)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--k-nn", type=int)
    p.add_argument("--measure", choices=("topological", "embedding", "both"))
    p.add_argument("--resolution", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dataset")
    p.add_argument("--data-root")
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)


def build_parser():
    ap = argparse.ArgumentParser(prog="cft2nn", description=__doc__)
    ap.add_argument("--version", action="version", version=f"cft2nn {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="compute diagrams, grids and persistence images")
    _config_args(p)
    p.add_argument("--force", action="store_true", help="recompute even if the cache matches")

    p = sub.add_parser("train", help="train the classifier on the cached features")
    _config_args(p)

    p = sub.add_parser("predict", help="conformal prediction sets for the test split")
    _config_args(p)
    p.add_argument("--checkpoint", help="defaults to <output_dir>/model.ckpt")

    p = sub.add_parser("verify-coverage", help="Monte Carlo check of the coverage guarantee")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--m", type=int, default=19, help="calibration size")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--generator", default="uniform", choices=("uniform", "dirichlet", "discrete", "constant"))

    p = sub.add_parser("info", help="show version, backend, config hash and cache state")
    _config_args(p)
    return ap


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg = cfg.override(key.strip(), parse_value(val))
    for flag, key in SHORTCUTS.items():
        val = getattr(args, flag, None)
        if val is not None:
            cfg = cfg.override(key, val)
    return cfg


def cmd_featurize(args):
    from .pipeline import featurize

    cfg = resolve_config(args)
    path, computed = featurize(cfg, args.cache_dir, force=args.force)
    print(f"{'wrote' if computed else 'up to date'}: {path}")
    return 0


def cmd_train(args):
    from .pipeline import train_stage

    cfg = resolve_config(args)
    ckpt, history = train_stage(cfg, args.cache_dir)
    last = history[-1]
    best = min(history, key=lambda e: e.valid_loss)
    print(f"checkpoint: {ckpt}")
    print(f"epochs={len(history)} best_epoch={best.epoch} valid_loss={best.valid_loss:.4f} "
          f"final_train_acc={last.train_acc:.4f}")
    return 0


def cmd_predict(args):
    from .pipeline import predict_stage

    cfg = resolve_config(args)
    for measure, (m, mode, results, metrics) in predict_stage(cfg, args.checkpoint, args.cache_dir).items():
        print(f"{measure}: alpha={cfg.conformal.alpha} mode={mode} coverage={m.coverage:.4f} "
              f"avg_size={m.avg_size:.3f}+-{m.size_sd:.3f} n={m.n}")
        print(f"  results: {results}\n  metrics: {metrics}")
    return 0


def cmd_verify_coverage(args):
    from .conformal import monte_carlo_coverage

    report = monte_carlo_coverage(args.generator, args.m, args.alpha, args.trials, args.seed)
    print(report.summary())
    return 0 if report.passed else EXIT_COVERAGE_FAIL


def cmd_info(args):
    from .cache import FeatureCache
    from .pipeline import feature_cache_path, run_paths

    cfg = resolve_config(args)
    cache = feature_cache_path(cfg, args.cache_dir)
    print(f"cft2nn {__version__}  backend={backend()}")
    print(f"config_hash={cfg.hash()}")
    print(f"feature_hash={cfg.feature_hash()}")
    print(f"dataset={cfg.dataset.name} root={cfg.dataset.root}")
    print(f"cache={cache} ({'present' if cache.exists() else 'missing'})")
    if cache.exists():
        fc = FeatureCache.load(cache)
        sizes = " ".join(f"{k}={len(v)}" for k, v in fc.splits.items())
        print(f"graphs={len(fc.labels)} classes={len(set(fc.labels.tolist()))} pi_shape={fc.pis.shape[1:]} {sizes}")
    for name, path in run_paths(cfg).items():
        if Path(path).exists():
            print(f"{name}={path}")
    return 0


COMMANDS = {
    "featurize": cmd_featurize,
    "train": cmd_train,
    "predict": cmd_predict,
    "verify-coverage": cmd_verify_coverage,
    "info": cmd_info,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    # overrides are always worth reporting
    logging.getLogger("cft2nn.config").setLevel(min(level, logging.INFO))
    try:
        return COMMANDS[args.command](args)
    except CFT2NNError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
