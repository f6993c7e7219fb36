"""Particle swarm optimization over box-bounded parameters, and the tuning
loop that searches the crop scale and binarization threshold maximizing
validation accuracy of the hard multi-view methods."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError
from .metrics import accuracy
from .multiview import (
    HARD_KINDS,
    AggregationMethod,
    aggregate_batch,
    predict_views_batch,
)
from .ndmath import TwoHeadMlp


@dataclass
class SwarmConfig:
    particles: int = 20
    iterations: int = 30
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    bounds: list = field(default_factory=list)  # (lo, hi) per dimension
    seed: int = 0

    def __post_init__(self):
        if self.particles < 2:
            raise ConfigError("need at least two particles")
        if self.iterations < 1:
            raise ConfigError("need at least one iteration")
        if min(self.inertia, self.cognitive, self.social) <= 0:
            raise ConfigError("inertia and acceleration coefficients must be positive")
        if not self.bounds:
            raise ConfigError("bounds must give (lo, hi) per dimension")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ConfigError(f"bound ({lo}, {hi}) is not an interval")


@dataclass
class PsoResult:
    position: np.ndarray
    value: float
    history: np.ndarray  # gbest value at init and after each iteration
    positions: list  # gbest position matching each history entry


def pso_minimize(objective, cfg: SwarmConfig) -> PsoResult:
    """Minimize a black-box function over a box.

    Standard synchronous update v <- w v + c1 r1 (pbest - x) + c2 r2
    (gbest - x); positions are clamped to the bounds with the velocity
    zeroed on clamped dimensions. Non-finite objective values are treated
    as +inf so the particle keeps searching. Deterministic per seed;
    evaluations and reductions run in particle-index order.
    """
    rng = np.random.default_rng(cfg.seed)
    lo = np.array([b[0] for b in cfg.bounds], dtype=np.float64)
    hi = np.array([b[1] for b in cfg.bounds], dtype=np.float64)
    p, d = cfg.particles, len(cfg.bounds)

    def safe_eval(xrow):
        v = float(objective(xrow))
        return v if np.isfinite(v) else np.inf

    x = lo + rng.random((p, d)) * (hi - lo)
    vel = np.zeros((p, d))
    pbest = x.copy()
    pval = np.array([safe_eval(x[i]) for i in range(p)])
    g_idx = int(np.argmin(pval))
    gbest = pbest[g_idx].copy()
    gval = float(pval[g_idx])
    history = [gval]
    positions = [gbest.copy()]

    for _ in range(cfg.iterations):
        r1 = rng.random((p, d))
        r2 = rng.random((p, d))
        vel = (
            cfg.inertia * vel
            + cfg.cognitive * r1 * (pbest - x)
            + cfg.social * r2 * (gbest - x)
        )
        x = x + vel
        clamped = (x < lo) | (x > hi)
        x = np.clip(x, lo, hi)
        vel[clamped] = 0.0
        for i in range(p):
            v = safe_eval(x[i])
            if v < pval[i]:
                pval[i] = v
                pbest[i] = x[i].copy()
                if v < gval:
                    gval = v
                    gbest = x[i].copy()
        history.append(gval)
        positions.append(gbest.copy())

    return PsoResult(gbest, gval, np.array(history), positions)


@dataclass
class TuneResult:
    sc: float
    t: float
    best_accuracy: float
    winning_weighting: str  # "confidence" or "certainty"
    history: np.ndarray
    trace: list  # (iteration, gbest_value, gbest_sc, gbest_t, weighting)


def tune_inference(
    model: TwoHeadMlp,
    val_set: Dataset,
    n: int,
    cfg: SwarmConfig,
    fixed_seed,
    fix_sc: float | None = None,
) -> TuneResult:
    """Search (sc, t) minimizing 1 - max(acc_co, acc_ce) on the validation
    set, where acc_co/acc_ce score the hard confidence-/certainty-weighted
    aggregations at threshold t over n views cropped at scale sc.

    The augmentation stream is pinned to fixed_seed so the objective is a
    pure function of (sc, t); fix_sc collapses the search to the threshold
    dimension only. cfg.bounds are [(sc_lo, sc_hi), (t_lo, t_hi)], or just
    the threshold bounds when fix_sc is given.
    """
    if len(val_set) == 0:
        raise ConfigError("validation set is empty")
    expect = 1 if fix_sc is not None else 2
    if len(cfg.bounds) != expect:
        raise ConfigError(f"expected {expect} bound pairs, got {len(cfg.bounds)}")
    if fix_sc is None:
        (sc_lo, sc_hi), (t_lo, t_hi) = cfg.bounds
        if not (0.0 < sc_lo < sc_hi <= 1.0):
            raise ConfigError("crop scale bounds must lie within (0, 1]")
    else:
        if not 0.0 < fix_sc <= 1.0:
            raise ConfigError("fix_sc must lie in (0, 1]")
        ((t_lo, t_hi),) = cfg.bounds
    if not (0.0 < t_lo < t_hi < 1.0):
        raise ConfigError("threshold bounds must lie within (0, 1)")

    labels = [img.label for img in val_set.images]
    n_classes = val_set.num_classes
    memo: dict[bytes, tuple[float, str]] = {}

    def objective(pos: np.ndarray) -> float:
        key = pos.tobytes()
        if key in memo:
            return memo[key][0]
        sc, t = (fix_sc, pos[0]) if fix_sc is not None else (pos[0], pos[1])
        sets = predict_views_batch(model, val_set, n, sc, fixed_seed)
        accs = {}
        for kind in HARD_KINDS:
            preds, _ = aggregate_batch(sets, AggregationMethod(kind, t), n_classes)
            accs[kind] = accuracy(preds, labels)
        best = max(accs.values())
        weighting = "confidence" if accs[HARD_KINDS[0]] >= accs[HARD_KINDS[1]] else "certainty"
        memo[key] = (1.0 - best, weighting)
        return 1.0 - best

    result = pso_minimize(objective, cfg)
    trace = []
    for it, (value, pos) in enumerate(zip(result.history, result.positions)):
        sc, t = (fix_sc, pos[0]) if fix_sc is not None else (pos[0], pos[1])
        trace.append((it, value, sc, t, memo[pos.tobytes()][1]))
    sc, t = (fix_sc, result.position[0]) if fix_sc is not None else tuple(result.position)
    return TuneResult(
        sc=float(sc),
        t=float(t),
        best_accuracy=1.0 - result.value,
        winning_weighting=memo[result.position.tobytes()][1],
        history=result.history,
        trace=trace,
    )


def write_tuning_trace(result: TuneResult, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "gbest_value", "gbest_sc", "gbest_t", "winning_weighting"])
        for it, value, sc, t, weighting in result.trace:
            writer.writerow([it, f"{value:.17g}", f"{sc:.17g}", f"{t:.17g}", weighting])
