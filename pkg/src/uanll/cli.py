"""Command-line interface.

Subcommands: gen-data, train, tune, eval, sweep, run. Every experiment
flag mirrors an ExperimentConfig field; --config loads a JSON file and
explicit flags override it.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .data import gen_synthetic_shapes, save_dataset
from .errors import ConfigError
from .harness import (
    ExperimentConfig,
    RunReport,
    SeedResult,
    aggregate_results,
    build_data,
    derive_seed,
    evaluate_methods,
    run_experiment,
    sweep,
    write_report_csv,
    write_report_json,
    _INIT,
    _TUNE,
    _TUNE_VIEWS,
)
from .ndmath import init_model
from .pso import SwarmConfig, tune_inference, write_tuning_trace
from .trainer import load_checkpoint, save_checkpoint, train_model, write_trainlog_csv


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _pairs(text):
    # "0-1,2-3" -> [[0, 1], [2, 3]]
    out = []
    for part in text.split(","):
        if part:
            a, b = part.split("-")
            out.append([int(a), int(b)])
    return out


def _strs(text):
    return [v for v in text.split(",") if v]


def _opt_float(text):
    return None if text.lower() in ("none", "off") else float(text)


_FIELD_PARSERS = {
    "data_source": str,
    "classes": int,
    "per_class": int,
    "side": int,
    "channels": int,
    "pixel_noise": float,
    "data_path": str,
    "split": _ints,
    "normalize_mode": str,
    "norm_means": _floats,
    "norm_stds": _floats,
    "noise_pairs": _pairs,
    "noise_rate": float,
    "noise_direction": str,
    "epochs": int,
    "batch_size": int,
    "lr0": float,
    "decay_start_epoch": int,
    "beta1": float,
    "beta2": float,
    "eps_adam": float,
    "weight_decay": float,
    "decoupled_decay": None,  # boolean flag
    "loss_kind": str,
    "smooth_rate": float,
    "train_crop_scale": _opt_float,
    "hidden_dims": _ints,
    "activation": str,
    "views": int,
    "test_crop_scale": float,
    "tune": None,
    "tune_particles": int,
    "tune_iterations": int,
    "tune_sc_bounds": _floats,
    "tune_t_bounds": _floats,
    "default_threshold": float,
    "methods": _strs,
    "ece_bins": int,
    "dump_views": None,
    "data_seed": int,
    "seeds": _ints,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment config; flags override it")
    for name, conv in _FIELD_PARSERS.items():
        flag = "--" + name.replace("_", "-")
        if conv is None:
            parser.add_argument(flag, default=None, action=argparse.BooleanOptionalAction)
        else:
            parser.add_argument(flag, default=None, type=conv)


def _config_from_args(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
        raw = cfg.to_dict()
    for name in _FIELD_PARSERS:
        value = getattr(args, name)
        if value is not None:
            raw[name] = value
    return ExperimentConfig.from_dict(raw) if raw else ExperimentConfig()


def _out_dir(args) -> Path:
    path = Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_gen_data(args) -> int:
    ds = gen_synthetic_shapes(
        args.classes, args.per_class, side=args.side,
        noise_std=args.pixel_noise, seed=args.seed, channels=args.channels,
    )
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} images ({args.classes} classes) to {args.out}")
    return 0


def _prepare_seed(cfg: ExperimentConfig, seed: int):
    train, val, test = build_data(cfg, seed)
    n_inputs = train.images[0].n_features
    model0 = init_model(
        [n_inputs] + list(cfg.hidden_dims), train.num_classes,
        activation=cfg.activation, seed=derive_seed(seed, _INIT),
    )
    return train, val, test, model0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    out = _out_dir(args)
    train, val, _, model0 = _prepare_seed(cfg, seed)
    model, log = train_model(train, val, model0, cfg.train_config(seed))
    ckpt = out / f"model_seed{seed}.uanll"
    save_checkpoint(model, ckpt, cfg.train_config(seed), log.best_epoch)
    write_trainlog_csv(log, out / f"trainlog_seed{seed}.csv")
    print(f"best epoch {log.best_epoch}, val loss {min(log.val_loss):.6f}, checkpoint {ckpt}")
    return 0


def cmd_tune(args) -> int:
    cfg = _config_from_args(args)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    out = _out_dir(args)
    model, _ = load_checkpoint(args.checkpoint)
    _, val, _, _ = _prepare_seed(cfg, seed)
    swarm = SwarmConfig(
        particles=cfg.tune_particles,
        iterations=cfg.tune_iterations,
        bounds=[tuple(cfg.tune_sc_bounds), tuple(cfg.tune_t_bounds)],
        seed=derive_seed(seed, _TUNE),
    )
    result = tune_inference(model, val, cfg.views, swarm, derive_seed(seed, _TUNE_VIEWS))
    write_tuning_trace(result, out / f"tuning_trace_seed{seed}.csv")
    print(
        f"tuned sc={result.sc:.4f} t={result.t:.4f} "
        f"val acc {result.best_accuracy:.4f} ({result.winning_weighting})"
    )
    return 0


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    out = _out_dir(args)
    model, _ = load_checkpoint(args.checkpoint)
    _, _, test, _ = _prepare_seed(cfg, seed)
    reports, fallback = evaluate_methods(
        cfg, model, test, seed, cfg.default_threshold, cfg.test_crop_scale, out
    )
    result = SeedResult(seed=seed, reports=reports, fallback_rate=fallback, tuned=None, train_log=None)
    report = RunReport(config=cfg, seed_results=[result], aggregate=aggregate_results([result]))
    write_report_csv(report, out / "report.csv")
    write_report_json(report, out / "report.json")
    for m, rep in reports.items():
        print(f"{m}: accuracy {rep.accuracy:.4f}, ece {rep.ece:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    values = _floats(args.values) if args.axis != "views" else _ints(args.values)
    out = _out_dir(args)
    rows = sweep(cfg, args.axis, values, out)
    print(f"wrote {len(rows)} sweep rows to {out / 'sweep.csv'}")
    return 0


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    report = run_experiment(cfg, out)
    for m, agg in report.aggregate.items():
        print(
            f"{m}: accuracy {100 * agg['acc_mean']:.2f} +- {100 * agg['acc_std']:.2f} %, "
            f"ece {agg['ece_mean']:.4f} +- {agg['ece_std']:.4f}"
        )
    print(f"report written to {out / 'report.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uanll",
        description="Uncertainty-aware classification with multi-view inference",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic shape dataset file")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=850)
    p.add_argument("--side", type=int, default=16)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--pixel-noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    for name, func, extra in (
        ("train", cmd_train, ()),
        ("tune", cmd_tune, ("checkpoint",)),
        ("eval", cmd_eval, ("checkpoint",)),
        ("sweep", cmd_sweep, ("axis", "values")),
        ("run", cmd_run, ()),
    ):
        p = sub.add_parser(name)
        _add_config_flags(p)
        p.add_argument("--out-dir", default="out")
        p.add_argument("--seed", type=int, default=None, help="experiment seed (single-seed commands)")
        if "checkpoint" in extra:
            p.add_argument("--checkpoint", required=True)
        if "axis" in extra:
            p.add_argument("--axis", required=True, choices=("views", "crop_scale", "threshold"))
            p.add_argument("--values", required=True, help="comma-separated values")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
