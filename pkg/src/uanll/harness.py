"""Experiment orchestration: declarative config, the full pipeline
(generate/ingest -> corrupt -> train -> tune -> multi-view evaluate ->
report), sweeps over inference knobs, and multi-seed mean/std reporting.

Every number in a report is a deterministic function of the config file:
all stage seeds are derived from the experiment seed, and report files are
written with fixed float formatting.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .data import (
    Dataset,
    NoiseSpec,
    compute_channel_stats,
    gen_synthetic_shapes,
    inject_asymmetric_noise,
    load_dataset,
    normalize,
    parse_cifar10_batch,
    split_dataset,
)
from .errors import ConfigError
from .metrics import MetricsReport, make_report
from .multiview import (
    ALL_KINDS,
    HARD_KINDS,
    AggregationMethod,
    predict_views_batch,
    winner_weight_fraction,
    write_views_csv,
)
from .ndmath import forward_batch, init_model
from .pso import SwarmConfig, TuneResult, tune_inference, write_tuning_trace
from .trainer import TrainConfig, TrainLog, train_model, write_trainlog_csv

SINGLE_VIEW = "single-view"
METHODS = (SINGLE_VIEW,) + ALL_KINDS

# stage tags for deriving independent substreams from one experiment seed
_DATA, _SPLIT, _NOISE_TRAIN, _NOISE_VAL, _INIT, _TRAIN, _VIEWS, _TUNE, _TUNE_VIEWS = range(1, 10)


def derive_seed(seed: int, stage: int) -> int:
    """Stable integer substream seed for one pipeline stage."""
    return int(np.random.SeedSequence([int(seed), int(stage)]).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    """Flat description of a full run; unknown JSON keys are rejected."""

    # data
    data_source: str = "synthetic"  # "synthetic" | "cifar10" | "file"
    classes: int = 4
    per_class: int = 850
    side: int = 16
    channels: int = 1
    pixel_noise: float = 0.1
    data_seed: int = 7  # dataset and split stay fixed across experiment seeds
    data_path: str | None = None  # cifar10 dir or cached dataset file
    split: list = field(default_factory=lambda: [2000, 400, 1000])
    normalize_mode: str = "dataset"  # "dataset" | "fixed" | "none"
    norm_means: list | None = None
    norm_stds: list | None = None
    # label noise
    noise_pairs: list = field(default_factory=lambda: [[0, 1], [2, 3]])
    noise_rate: float = 0.4
    noise_direction: str = "both"
    # training
    epochs: int = 60
    batch_size: int = 64
    lr0: float = 1e-3
    decay_start_epoch: int = 24
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    weight_decay: float = 0.0
    decoupled_decay: bool = False
    loss_kind: str = "UANLL"
    smooth_rate: float = 0.4
    train_crop_scale: float | None = 0.1
    hidden_dims: list = field(default_factory=lambda: [128, 64])
    activation: str = "tanh"
    # multi-view inference
    views: int = 50
    test_crop_scale: float = 0.4
    # tuning
    tune: bool = False
    tune_particles: int = 20
    tune_iterations: int = 30
    tune_sc_bounds: list = field(default_factory=lambda: [0.1, 1.0])
    tune_t_bounds: list = field(default_factory=lambda: [0.05, 0.95])
    default_threshold: float = 0.5
    # evaluation
    methods: list = field(default_factory=lambda: list(METHODS))
    ece_bins: int = 32
    dump_views: bool = False
    # repetition
    seeds: list = field(default_factory=lambda: [42, 0, 17, 9, 3])

    def __post_init__(self):
        if self.data_source not in ("synthetic", "cifar10", "file"):
            raise ConfigError(f"unknown data_source {self.data_source!r}")
        if self.data_source != "synthetic" and not self.data_path:
            raise ConfigError(f"data_source {self.data_source!r} needs data_path")
        if self.normalize_mode not in ("dataset", "fixed", "none"):
            raise ConfigError(f"unknown normalize_mode {self.normalize_mode!r}")
        if self.normalize_mode == "fixed" and (self.norm_means is None or self.norm_stds is None):
            raise ConfigError("normalize_mode 'fixed' needs norm_means and norm_stds")
        if not self.methods:
            raise ConfigError("need at least one evaluation method")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.views < 1:
            raise ConfigError("views must be >= 1")
        if not 0.0 < self.test_crop_scale <= 1.0:
            raise ConfigError("test_crop_scale must lie in (0, 1]")
        if not 0.0 < self.default_threshold < 1.0:
            raise ConfigError("default_threshold must lie in (0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            raw = json.load(f)
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(raw)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr0=self.lr0,
            decay_start_epoch=self.decay_start_epoch,
            beta1=self.beta1,
            beta2=self.beta2,
            eps_adam=self.eps_adam,
            weight_decay=self.weight_decay,
            decoupled_decay=self.decoupled_decay,
            loss_kind=self.loss_kind,
            smooth_rate=self.smooth_rate,
            aug_scale=self.train_crop_scale,
            seed=derive_seed(seed, _TRAIN),
        )


@dataclass
class SeedResult:
    seed: int
    reports: dict  # method -> MetricsReport
    fallback_rate: dict  # method -> fraction of samples that fell back to mode
    tuned: TuneResult | None
    train_log: TrainLog | None  # None when evaluating a stored checkpoint


@dataclass
class RunReport:
    config: ExperimentConfig
    seed_results: list
    aggregate: dict  # method -> {acc_mean, acc_std, ece_mean, ece_std}


def build_data(cfg: ExperimentConfig, seed: int, base: Dataset | None = None):
    """Stages: source -> split -> pair-flip noise on train+val -> normalize.

    Returns (train, val, test); test labels stay clean. The dataset and its
    split derive from cfg.data_seed, so repeated experiment seeds see one
    fixed dataset (as with a public corpus) and differ only in noise
    realization, initialization, training order, and augmentation. `base`
    short-circuits the source stage (shares one load across seeds).
    """
    if base is None:
        base = load_base_dataset(cfg)
    train, val, test = split_dataset(base, cfg.split, derive_seed(cfg.data_seed, _SPLIT))
    if cfg.noise_rate > 0 and cfg.noise_pairs:
        pairs = tuple(tuple(p) for p in cfg.noise_pairs)
        train = inject_asymmetric_noise(
            train,
            NoiseSpec(pairs, cfg.noise_rate, derive_seed(seed, _NOISE_TRAIN), cfg.noise_direction),
        )
        val = inject_asymmetric_noise(
            val,
            NoiseSpec(pairs, cfg.noise_rate, derive_seed(seed, _NOISE_VAL), cfg.noise_direction),
        )
    if cfg.normalize_mode != "none":
        if cfg.normalize_mode == "dataset":
            means, stds = compute_channel_stats(train)
        else:
            means, stds = cfg.norm_means, cfg.norm_stds
        train = normalize(train, means, stds)
        val = normalize(val, means, stds)
        test = normalize(test, means, stds)
    return train, val, test


def load_base_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data_source == "synthetic":
        return gen_synthetic_shapes(
            cfg.classes,
            cfg.per_class,
            side=cfg.side,
            noise_std=cfg.pixel_noise,
            seed=derive_seed(cfg.data_seed, _DATA),
            channels=cfg.channels,
        )
    if cfg.data_source == "file":
        return load_dataset(cfg.data_path)
    # cifar10: concatenate every .bin batch under data_path in name order
    paths = sorted(Path(cfg.data_path).glob("*.bin"))
    if not paths:
        raise ConfigError(f"no .bin batches under {cfg.data_path}")
    blobs = b"".join(p.read_bytes() for p in paths)
    return parse_cifar10_batch(blobs)


def single_view_outputs(model, ds: Dataset):
    x, _ = ds.stack()
    h, _, _ = forward_batch(model, x.reshape(len(ds), -1))
    preds = np.argmax(h, axis=1)
    confs = h[np.arange(len(ds)), preds]
    return preds.tolist(), confs.tolist()


def evaluate_methods(
    cfg: ExperimentConfig,
    model,
    test: Dataset,
    seed: int,
    threshold: float,
    sc_eval: float,
    out_dir: Path | None = None,
):
    """MetricsReports (and fallback rates) for each requested method."""
    labels = [img.label for img in test.images]
    reports: dict[str, MetricsReport] = {}
    fallback: dict[str, float] = {}
    mv_methods = [m for m in cfg.methods if m != SINGLE_VIEW]
    if SINGLE_VIEW in cfg.methods:
        preds, confs = single_view_outputs(model, test)
        reports[SINGLE_VIEW] = make_report(preds, labels, confs, SINGLE_VIEW, cfg.ece_bins)
        fallback[SINGLE_VIEW] = 0.0
    if mv_methods:
        sets = predict_views_batch(model, test, cfg.views, sc_eval, derive_seed(seed, _VIEWS))
        if cfg.dump_views and out_dir is not None:
            write_views_csv(sets, out_dir / f"views_seed{seed}.csv")
        for name in mv_methods:
            method = AggregationMethod(name, threshold if name in HARD_KINDS else None)
            preds, confs, flags = [], [], []
            for mv in sets:
                cls, conf, fb = winner_weight_fraction(mv, method, test.num_classes)
                preds.append(cls)
                confs.append(conf)
                flags.append(fb)
            reports[name] = make_report(preds, labels, confs, name, cfg.ece_bins)
            fallback[name] = float(np.mean(flags))
    return reports, fallback


def run_seed(
    cfg: ExperimentConfig, seed: int, base: Dataset | None = None, out_dir: Path | None = None
) -> SeedResult:
    train, val, test = build_data(cfg, seed, base)
    n_inputs = train.images[0].n_features
    model0 = init_model(
        [n_inputs] + list(cfg.hidden_dims),
        train.num_classes,
        activation=cfg.activation,
        seed=derive_seed(seed, _INIT),
    )
    model, log = train_model(train, val, model0, cfg.train_config(seed))
    if out_dir is not None:
        write_trainlog_csv(log, out_dir / f"trainlog_seed{seed}.csv")

    tuned = None
    threshold = cfg.default_threshold
    sc_eval = cfg.test_crop_scale
    if cfg.tune:
        swarm = SwarmConfig(
            particles=cfg.tune_particles,
            iterations=cfg.tune_iterations,
            bounds=[tuple(cfg.tune_sc_bounds), tuple(cfg.tune_t_bounds)],
            seed=derive_seed(seed, _TUNE),
        )
        tuned = tune_inference(model, val, cfg.views, swarm, derive_seed(seed, _TUNE_VIEWS))
        threshold = tuned.t
        sc_eval = tuned.sc
        if out_dir is not None:
            write_tuning_trace(tuned, out_dir / f"tuning_trace_seed{seed}.csv")

    reports, fallback = evaluate_methods(cfg, model, test, seed, threshold, sc_eval, out_dir)
    return SeedResult(seed=seed, reports=reports, fallback_rate=fallback, tuned=tuned, train_log=log)


def aggregate_results(seed_results: list) -> dict:
    """Per-method mean and population standard deviation across seeds."""
    methods = list(seed_results[0].reports)
    agg = {}
    for m in methods:
        accs = np.array([r.reports[m].accuracy for r in seed_results])
        eces = np.array([r.reports[m].ece for r in seed_results])
        agg[m] = {
            "acc_mean": float(accs.mean()),
            "acc_std": float(accs.std()),
            "ece_mean": float(eces.mean()),
            "ece_std": float(eces.std()),
        }
    return agg


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunReport:
    """Execute every stage for every seed and aggregate."""
    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
    base = load_base_dataset(cfg)
    results = [run_seed(cfg, seed, base, out_path) for seed in cfg.seeds]
    report = RunReport(config=cfg, seed_results=results, aggregate=aggregate_results(results))
    if out_path is not None:
        write_report_csv(report, out_path / "report.csv")
        write_report_json(report, out_path / "report.json")
    return report


def _fmt(x) -> str:
    return f"{x:.17g}"


def write_report_csv(report: RunReport, path) -> None:
    """Per-seed rows then mean/std rows; population std, documented in the
    header comment row."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["# std is population (divide by n)"])
        writer.writerow(
            ["seed", "method", "accuracy", "ece", "fallback_rate", "tuned_sc", "tuned_t"]
        )
        for r in report.seed_results:
            sc = _fmt(r.tuned.sc) if r.tuned else ""
            t = _fmt(r.tuned.t) if r.tuned else ""
            for m, rep in r.reports.items():
                writer.writerow(
                    [r.seed, m, _fmt(rep.accuracy), _fmt(rep.ece), _fmt(r.fallback_rate[m]), sc, t]
                )
        for m, a in report.aggregate.items():
            writer.writerow(["mean", m, _fmt(a["acc_mean"]), _fmt(a["ece_mean"]), "", "", ""])
            writer.writerow(["std", m, _fmt(a["acc_std"]), _fmt(a["ece_std"]), "", "", ""])


def write_report_json(report: RunReport, path) -> None:
    payload = {
        "config": report.config.to_dict(),
        "aggregate": report.aggregate,
        "seeds": [
            {
                "seed": r.seed,
                "methods": {m: rep.to_json_dict() for m, rep in r.reports.items()},
                "fallback_rate": r.fallback_rate,
                "tuned": None
                if r.tuned is None
                else {
                    "sc": r.tuned.sc,
                    "t": r.tuned.t,
                    "best_accuracy": r.tuned.best_accuracy,
                    "winning_weighting": r.tuned.winning_weighting,
                },
                "best_epoch": None if r.train_log is None else r.train_log.best_epoch,
            }
            for r in report.seed_results
        ],
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


SWEEP_AXES = ("views", "crop_scale", "threshold")


def sweep(cfg: ExperimentConfig, axis: str, values, out_dir=None) -> list:
    """Evaluate the trained models while varying one inference knob.

    Training happens once per seed; each value only changes view count,
    crop scale, or hard threshold at inference. Returns per-seed rows
    (axis, value, seed, method, accuracy, ece, fallback_rate) followed by
    mean/std rows per value.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    for v in values:
        if axis == "views" and (int(v) != v or v < 1):
            raise ConfigError(f"view count {v} invalid")
        if axis == "crop_scale" and not 0.0 < v <= 1.0:
            raise ConfigError(f"crop scale {v} invalid")
        if axis == "threshold" and not 0.0 < v < 1.0:
            raise ConfigError(f"threshold {v} invalid")

    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
    base = load_base_dataset(cfg)

    rows = []
    for seed in cfg.seeds:
        train, val, test = build_data(cfg, seed, base)
        n_inputs = train.images[0].n_features
        model0 = init_model(
            [n_inputs] + list(cfg.hidden_dims),
            train.num_classes,
            activation=cfg.activation,
            seed=derive_seed(seed, _INIT),
        )
        model, _ = train_model(train, val, model0, cfg.train_config(seed))
        for v in values:
            eval_cfg = dataclasses.replace(
                cfg,
                views=int(v) if axis == "views" else cfg.views,
                test_crop_scale=float(v) if axis == "crop_scale" else cfg.test_crop_scale,
            )
            thr = float(v) if axis == "threshold" else cfg.default_threshold
            reports, fallback = evaluate_methods(
                eval_cfg, model, test, seed, thr, eval_cfg.test_crop_scale
            )
            for m, rep in reports.items():
                rows.append((axis, v, seed, m, rep.accuracy, rep.ece, fallback[m]))

    for v in values:
        for m in cfg.methods:
            accs = np.array([r[4] for r in rows if r[1] == v and r[3] == m and isinstance(r[2], int)])
            eces = np.array([r[5] for r in rows if r[1] == v and r[3] == m and isinstance(r[2], int)])
            if accs.size:
                rows.append((axis, v, "mean", m, float(accs.mean()), float(eces.mean()), ""))
                rows.append((axis, v, "std", m, float(accs.std()), float(eces.std()), ""))

    if out_path is not None:
        with open(out_path / "sweep.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["axis", "value", "seed", "method", "accuracy", "ece", "fallback_rate"])
            for axis_name, v, seed, m, acc, e, fb in rows:
                writer.writerow(
                    [axis_name, _fmt(v) if isinstance(v, float) else v, seed, m, _fmt(acc), _fmt(e), _fmt(fb) if fb != "" else ""]
                )
    return rows
