"""Mini-batch training with Adam, L2 weight decay, a linear learning-rate
decay after a warm threshold epoch, per-epoch validation, and selection of
the best-validation-loss checkpoint."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, crop_batch
from .errors import ConfigError, ShapeError, TrainingDiverged
from .losses import ablation_loss, cross_entropy_loss, one_hot, smooth_labels, uanll_loss
from .ndmath import GradientSet, TwoHeadMlp, forward_batch, load_model, model_backward, save_model

LOSS_KINDS = ("UANLL", "CE", "ABLATION")

# substream tags so shuffling and augmentation never share a stream
_SHUFFLE, _AUG = 101, 102


@dataclass
class TrainConfig:
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
    smooth_rate: float = 0.0
    aug_scale: float | None = None  # None disables train-time cropping
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if not 0 <= self.decay_start_epoch <= self.epochs:
            raise ConfigError("decay_start_epoch must lie in [0, epochs]")
        if not 0.0 <= self.smooth_rate <= 1.0:
            raise ConfigError("smooth_rate must lie in [0, 1]")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.aug_scale is not None and not 0.0 < self.aug_scale <= 1.0:
            raise ConfigError("aug_scale must lie in (0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 means no epoch ran

    def __len__(self) -> int:
        return len(self.train_loss)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Constant lr0 through decay_start_epoch, then linear to zero at the
    final epoch."""
    if not 1 <= epoch <= cfg.epochs:
        raise ConfigError(f"epoch {epoch} outside 1..{cfg.epochs}")
    if epoch <= cfg.decay_start_epoch:
        return cfg.lr0
    return cfg.lr0 * (cfg.epochs - epoch) / (cfg.epochs - cfg.decay_start_epoch)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros(cls, model: TwoHeadMlp) -> "AdamState":
        return cls(
            m=[np.zeros_like(a) for a in model.arrays()],
            v=[np.zeros_like(a) for a in model.arrays()],
        )


def adam_step(
    model: TwoHeadMlp, grads: GradientSet, state: AdamState, lr: float, cfg: TrainConfig
):
    """One bias-corrected Adam update; returns (new model, new state).

    L2 decay is coupled by default (added to the gradient before the
    moments); cfg.decoupled_decay subtracts lr * wd * param instead.
    """
    t = state.t + 1
    new_params, new_m, new_v = [], [], []
    for a, g, m, v in zip(model.arrays(), grads.arrays(), state.m, state.v):
        if a.shape != g.shape:
            raise ShapeError("gradient shape does not match parameter shape")
        g_eff = g + cfg.weight_decay * a if (cfg.weight_decay and not cfg.decoupled_decay) else g
        m2 = cfg.beta1 * m + (1.0 - cfg.beta1) * g_eff
        v2 = cfg.beta2 * v + (1.0 - cfg.beta2) * g_eff * g_eff
        m_hat = m2 / (1.0 - cfg.beta1**t)
        v_hat = v2 / (1.0 - cfg.beta2**t)
        a2 = a - lr * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)
        if cfg.weight_decay and cfg.decoupled_decay:
            a2 = a2 - lr * cfg.weight_decay * a
        new_params.append(a2)
        new_m.append(m2)
        new_v.append(v2)
    return model.replace_arrays(new_params), AdamState(new_m, new_v, t)


def _loss_for(kind: str, y: np.ndarray, h: np.ndarray, s: np.ndarray):
    if kind == "UANLL":
        return uanll_loss(y, h, s)
    if kind == "CE":
        return cross_entropy_loss(y, h)
    return ablation_loss(y, h)


def evaluate_loss(model: TwoHeadMlp, x: np.ndarray, targets: np.ndarray, kind: str) -> float:
    h, s, _ = forward_batch(model, x)
    return _loss_for(kind, targets, h, s).value


def train_model(ds_train: Dataset, ds_val: Dataset, model_init: TwoHeadMlp, cfg: TrainConfig):
    """Train and return (best-validation-loss model, TrainLog).

    Per epoch: seeded shuffle, optional per-batch random resized crop,
    forward, loss on smoothed targets, backward, Adam. Validation runs on
    un-augmented data with the same loss (smoothed targets) and raw-label
    accuracy. Targets are smoothed once up front.
    """
    if len(ds_train) == 0 or len(ds_val) == 0:
        raise ConfigError("train and validation sets must be non-empty")
    n_classes = ds_train.num_classes
    x4_train, labels_train = ds_train.stack()
    x4_val, labels_val = ds_val.stack()
    x_val = x4_val.reshape(len(ds_val), -1)
    y_train = one_hot(labels_train, n_classes)
    y_val = one_hot(labels_val, n_classes)
    if cfg.smooth_rate > 0:
        y_train = smooth_labels(y_train, cfg.smooth_rate, n_classes)
        y_val = smooth_labels(y_val, cfg.smooth_rate, n_classes)

    shuffle_rng = np.random.default_rng([cfg.seed, _SHUFFLE])
    aug_rng = np.random.default_rng([cfg.seed, _AUG])

    model = model_init
    state = AdamState.zeros(model)
    log = TrainLog()
    best_model = model_init
    best_val = np.inf
    m = len(ds_train)

    for epoch in range(1, cfg.epochs + 1):
        lr = lr_schedule(epoch, cfg)
        perm = shuffle_rng.permutation(m)
        total = 0.0
        for b, start in enumerate(range(0, m, cfg.batch_size)):
            batch = perm[start : start + cfg.batch_size]
            xb = x4_train[batch]
            if cfg.aug_scale is not None:
                xb = crop_batch(xb, cfg.aug_scale, aug_rng)
            xb = xb.reshape(len(batch), -1)
            h, s, cache = forward_batch(model, xb)
            loss = _loss_for(cfg.loss_kind, y_train[batch], h, s)
            if not np.isfinite(loss.value):
                raise TrainingDiverged(epoch, b, loss.value)
            grads = model_backward(model, cache, loss.d_h, loss.d_s)
            model, state = adam_step(model, grads, state, lr, cfg)
            total += loss.value * len(batch)

        h, s, _ = forward_batch(model, x_val)
        val_loss = _loss_for(cfg.loss_kind, y_val, h, s).value
        val_acc = float(np.mean(np.argmax(h, axis=1) == labels_val))
        log.train_loss.append(total / m)
        log.val_loss.append(val_loss)
        log.val_acc.append(val_acc)
        log.lr.append(lr)
        if val_loss < best_val:
            best_val = val_loss
            best_model = model
            log.best_epoch = epoch

    return best_model, log


def detect_overfitting(log: TrainLog, tail_fraction: float = 0.1, block: int = 10) -> dict:
    """Check a TrainLog for the noisy-label overfitting signature: an
    interior validation-loss minimum followed by a rise, while the training
    loss keeps falling (judged on consecutive block means)."""
    n = len(log)
    if n < 2 * block:
        raise ConfigError("log too short to judge overfitting")
    val = np.array(log.val_loss)
    train = np.array(log.train_loss)
    min_idx = int(np.argmin(val))
    rise = float(val[-1] - val[min_idx])
    blocks = [train[i : i + block].mean() for i in range(0, n - block + 1, block)]
    train_falling = all(b2 < b1 for b1, b2 in zip(blocks, blocks[1:]))
    interior = min_idx < n - max(1, int(np.ceil(tail_fraction * n)))
    return {
        "val_min_epoch": min_idx + 1,
        "val_rise": rise,
        "train_blocks_falling": train_falling,
        "overfitting": bool(interior and rise > 0.0 and train_falling),
    }


def write_trainlog_csv(log: TrainLog, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "lr", "train_loss", "val_loss", "val_acc"])
        for i in range(len(log)):
            writer.writerow(
                [
                    i + 1,
                    f"{log.lr[i]:.17g}",
                    f"{log.train_loss[i]:.17g}",
                    f"{log.val_loss[i]:.17g}",
                    f"{log.val_acc[i]:.17g}",
                ]
            )


def save_checkpoint(model: TwoHeadMlp, path, cfg: TrainConfig, best_epoch: int) -> None:
    """Binary weights plus a JSON sidecar recording the producing config."""
    path = Path(path)
    save_model(model, path)
    sidecar = {
        "activation": model.activation,
        "layer_dims": model.layer_dims,
        "n_classes": model.n_classes,
        "best_epoch": best_epoch,
        "train_config": asdict(cfg),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[TwoHeadMlp, dict]:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    model = load_model(path, activation=sidecar.get("activation", "tanh"))
    return model, sidecar
