"""Command-line entry point.

Subcommands read the same config file (see :mod:`fsplaplace.config`):

    fsplaplace train --config run.ini              # MAP training -> params.ckpt, train_log.csv
    fsplaplace laplace --config run.ini            # params.ckpt -> posterior.bin
    fsplaplace predict --config run.ini            # posterior.bin -> predictions.csv
    fsplaplace experiment --config run.ini         # full task with baselines, metrics and plot
    fsplaplace diagnose-nullspace --config run.ini # dense null-space ratio -> nullspace.json

Exit codes: 0 success, 2 configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import load_config
from .errors import ConfigError, NumericalError
from .experiments import (
    build_setup, covariance_context, fit_fsp_laplace, fit_fsp_map, lanczos_config, output_grid,
    run_experiment, write_csv, write_json,
)
from .laplace import load_posterior, null_space_diagnostic, save_posterior
from .nn import load_checkpoint, save_checkpoint
from .predict import lin_predict
from .train import write_train_log

log = logging.getLogger("fsplaplace")


def _out(cfg, args) -> Path:
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _network_task(cfg):
    if cfg.task not in ("sine-regression", "two-moons"):
        raise ConfigError(f"this subcommand needs task sine-regression or two-moons, not {cfg.task!r}")


def cmd_train(cfg, args):
    _network_task(cfg)
    setup = build_setup(cfg)
    res = fit_fsp_map(cfg, setup)
    out = _out(cfg, args)
    save_checkpoint(out / "params.ckpt", setup.spec, res.params)
    write_train_log(out / "train_log.csv", res.log)
    print(f"trained {len(res.log)} steps, final objective {res.log[-1][3]:.6g} -> {out / 'params.ckpt'}")


def _load_params(cfg, args, setup):
    path = Path(args.checkpoint or Path(args.out or cfg.out) / "params.ckpt")
    spec, params = load_checkpoint(path)
    if spec != setup.spec:
        raise ConfigError(f"checkpoint architecture {spec.layer_widths} does not match config {setup.spec.layer_widths}")
    return params


def cmd_laplace(cfg, args):
    _network_task(cfg)
    setup = build_setup(cfg)
    params = _load_params(cfg, args, setup)
    pf = fit_fsp_laplace(cfg, setup, params)
    out = _out(cfg, args)
    save_posterior(out / "posterior.bin", pf)
    print(f"posterior rank {pf.rank} (truncated {pf.k}) -> {out / 'posterior.bin'}")


def cmd_predict(cfg, args):
    _network_task(cfg)
    setup = build_setup(cfg)
    out = _out(cfg, args)
    pf = load_posterior(args.posterior or out / "posterior.bin")
    Xq, _ = output_grid(cfg, setup.spec.input_dim)
    pred = lin_predict(setup.spec, pf, Xq)
    cols = [f"x{j + 1}" for j in range(Xq.shape[1])]
    O = setup.spec.output_dim
    header = cols + [f"mean_{o}" for o in range(O)] + [f"std_{o}" for o in range(O)]
    write_csv(out / "predictions.csv", header, np.hstack([Xq, pred.mean, pred.std]).tolist())
    print(f"wrote {Xq.shape[0]} predictions -> {out / 'predictions.csv'}")


def cmd_experiment(cfg, args):
    out = run_experiment(cfg, args.out)
    print(f"artifacts in {out}")


def cmd_diagnose(cfg, args):
    _network_task(cfg)
    setup = build_setup(cfg)
    if args.checkpoint or (Path(args.out or cfg.out) / "params.ckpt").exists():
        params = _load_params(cfg, args, setup)
    else:
        params = fit_fsp_map(cfg, setup).params
    C = covariance_context(cfg, setup)
    ratio = null_space_diagnostic(setup.spec, params, setup.train.X, setup.prior, C, setup.likelihood,
                                  lanczos_config(cfg), seed=cfg.seed)
    out = _out(cfg, args)
    write_json(out / "nullspace.json", {"task": cfg.task, "kernel": setup.prior_info["kernel"], "ratio": ratio})
    print(f"||P0 H P0||_F / ||H||_F = {ratio:.4e}")


COMMANDS = {
    "train": cmd_train,
    "laplace": cmd_laplace,
    "predict": cmd_predict,
    "experiment": cmd_experiment,
    "diagnose-nullspace": cmd_diagnose,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="fsplaplace", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None, help="override experiment.seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--threads", type=int, default=0, help="BLAS threads; 0 = deterministic single-thread mode")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("laplace", "diagnose-nullspace"):
            p.add_argument("--checkpoint", default=None)
        if name == "predict":
            p.add_argument("--posterior", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
        with threadpool_limits(limits=max(1, args.threads)):
            COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error{_where(exc)}: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError, MemoryError) as exc:
        print(f"numerical error{_where(exc)}: {exc}", file=sys.stderr)
        return 3
    return 0


def _where(exc):
    stage = getattr(exc, "stage", None)
    return f" in stage {stage}" if stage else ""


if __name__ == "__main__":
    sys.exit(main())
