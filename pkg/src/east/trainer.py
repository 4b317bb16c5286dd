"""Annealed surrogate training: AdamW, geometric cooling, two-level early stopping."""

from __future__ import annotations

import csv
import itertools
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from . import model as mlp
from .data import Dataset, Standardizer, split, standardize_fit_apply
from .heaviside import T_MAX, check_temperature
from .metrics import MetricSpec, cross_entropy, dice_loss, summary, surrogate_loss
from .softset import confusion, confusion_op, predict_hard, predict_soft_op

CONFIG_SCHEMA = "east-config-v1"
LOSSES = ("east", "ce", "dice")
LR_GRID = (0.01, 0.001, 0.0001)
DROPOUT_GRID = (0.25, 0.5)
DECAY_GRID = (0.8, 0.9)
TABULAR_BATCH_GRID = (128, 256, 512, 1024, 2048)


class TrainingError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration and state

@dataclass(frozen=True)
class TrainConfig:
    loss: str = "east"
    metric: MetricSpec = field(default_factory=MetricSpec)
    batch_size: int = 512
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    dropout: float = 0.25
    T0: float = 0.2
    r: float = 0.9
    seed: int = 0
    max_epochs_per_phase: int = 200
    inner_patience: int = 50
    outer_patience: int = 3
    max_phases: int = 100
    hidden: tuple[int, int, int] = mlp.HIDDEN_WIDTHS
    detach_threshold: bool = False

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be nonnegative")
        if not 0 < self.r < 1:
            raise ValueError("decay r must lie in (0, 1)")
        check_temperature(self.T0)
        if min(self.inner_patience, self.outer_patience) < 0 or self.max_epochs_per_phase < 1:
            raise ValueError("patience values must be >= 0 and max_epochs_per_phase >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        out = {"schema": CONFIG_SCHEMA}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.to_dict() if isinstance(value, MetricSpec) else value
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        schema = data.pop("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise ValueError(f"unsupported config schema {schema!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "metric" in data and isinstance(data["metric"], dict):
            data["metric"] = MetricSpec.from_dict(data["metric"])
        if "hidden" in data:
            data["hidden"] = tuple(data["hidden"])
        return cls(**data)


@dataclass
class AnnealState:
    T0: float = 0.2
    r: float = 0.9
    k: int = 0
    inner_patience_epochs: int = 50
    outer_patience_steps: int = 3
    best_val_loss: float = math.inf
    epochs_since_improve: int = 0
    steps_since_improve: int = 0

    @property
    def temperature(self) -> float:
        return anneal_temperature(self)


def anneal_temperature(state: AnnealState) -> float:
    """``T0 * r**k`` clamped into ``(0, 0.4]``."""
    T = state.T0 * state.r ** state.k
    return min(max(T, np.finfo(float).tiny), T_MAX)


# --------------------------------------------------------------------------
# optimiser

class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        b1, b2 = self.betas
        self.t += 1
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ad.ShapeError("adamw", p.shape, g.shape)
            p *= 1 - self.lr * self.weight_decay
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adamw_step(params, grads, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.01, state: AdamW | None = None) -> list[np.ndarray]:
    """Functional AdamW step; pass ``state`` to carry moments across calls."""
    opt = state if state is not None else AdamW(lr, betas, eps, weight_decay)
    out = [np.array(p, dtype=np.float64) for p in params]
    opt.step(out, [np.asarray(g, dtype=np.float64) for g in grads])
    return out


# --------------------------------------------------------------------------
# data plumbing

class SplitData(NamedTuple):
    train: Dataset
    val: Dataset
    test: Dataset | None = None


def prepare(ds: Dataset, seed: int) -> tuple[SplitData, Standardizer]:
    """Stratified split followed by train-fitted standardisation."""
    train, val, test = split(ds, seed)
    (train, val, test), scaler = standardize_fit_apply(train, val, test)
    return SplitData(train, val, test), scaler


# --------------------------------------------------------------------------
# losses and evaluation

def batch_loss(config: TrainConfig, p: ad.Tensor, labels, d: int, T: float | None) -> ad.Tensor:
    if config.loss == "ce":
        return cross_entropy(p, labels)
    if config.loss == "dice":
        return dice_loss(p, labels)
    soft = predict_soft_op(p, T, detach_threshold=config.detach_threshold)
    return surrogate_loss(config.metric, confusion_op(labels, soft, d))


def evaluate_loss(params: mlp.MlpParams, config: TrainConfig, data: Dataset, T: float | None) -> float:
    """Training loss on the whole set in eval mode (one confusion matrix)."""
    p = mlp.forward_op(params, data.X)
    return batch_loss(config, p, data.y, data.d, T).item()


def hard_confusion(params: mlp.MlpParams, data: Dataset) -> np.ndarray:
    p = mlp.predict_proba(params, data.X)
    return confusion(data.y, predict_hard(p), data.d)


def hard_metrics(params: mlp.MlpParams, data: Dataset, betas=1.0) -> dict:
    C = hard_confusion(params, data)
    out = summary(C, betas)
    out["confusion"] = C.tolist()
    return out


def train_epoch(params: mlp.MlpParams, config: TrainConfig, T: float | None, train: Dataset,
                rng: np.random.Generator, optimizer: AdamW | None = None) -> tuple[mlp.MlpParams, float]:
    """One shuffled pass over ``train``; the final short batch is kept.

    ``params`` is updated in place and also returned.
    """
    if optimizer is None:
        optimizer = AdamW(config.learning_rate, weight_decay=config.weight_decay)
    arrays = params.arrays()
    order = rng.permutation(train.n)
    losses = []
    for b, start in enumerate(range(0, train.n, config.batch_size)):
        idx = order[start:start + config.batch_size]
        leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
        p = mlp.forward_op(params, train.X[idx], leaves, train_mode=True, rng=rng)
        loss = batch_loss(config, p, train.y[idx], train.d, T)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} in batch {b} at T={T}")
        grads = ad.backward(loss)
        optimizer.step(arrays, [grads.get(leaf, np.zeros_like(a)) for leaf, a in zip(leaves, arrays)])
        losses.append(value)
    return params, float(np.mean(losses))


# --------------------------------------------------------------------------
# fit

@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)
    phase_boundaries: list[int] = field(default_factory=list)
    temperatures: list[float] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = -1
    best_val_loss: float = math.inf
    best_T: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def write_csv(self, path) -> Path:
        path = Path(path)
        columns = ["epoch", "phase", "T", "train_loss", "val_loss", "val_f1", "val_accuracy", "val_mcc"]
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
            writer.writeheader()
            writer.writerows(self.records)
        return path


@dataclass
class FitResult:
    params: mlp.MlpParams
    history: TrainHistory
    config: TrainConfig
    test_metrics: dict | None = None

    def report(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "history": self.history.to_dict(),
            "test_metrics": self.test_metrics,
        }


def _rngs(seed: int) -> tuple[int, np.random.Generator]:
    init_seq, train_seq = np.random.SeedSequence(seed).spawn(2)
    return int(init_seq.generate_state(1)[0]), np.random.default_rng(train_seq)


def fit(config: TrainConfig, data: SplitData) -> FitResult:
    """Train an MLP under ``config``.

    EAST losses run phases at ``T_k = T0 r^k``: each phase stops after
    ``inner_patience`` epochs without a new phase-best validation loss
    (evaluated at the phase temperature), and annealing stops after
    ``outer_patience`` consecutive phases that fail to improve the global
    best.  Baseline losses run a single phase.  The parameters with the
    lowest validation loss seen anywhere are returned.
    """
    train, val = data.train, data.val
    d = train.d
    annealing = config.loss == "east"
    if annealing and config.batch_size < 16 * d:
        warnings.warn(f"batch_size {config.batch_size} < 16*d = {16 * d}: per-batch confusion "
                      "matrices are noisy estimates of the population metric", stacklevel=2)
    init_seed, rng = _rngs(config.seed)
    params = mlp.init(train.input_dim, d, config.dropout, init_seed, config.hidden)
    optimizer = AdamW(config.learning_rate, weight_decay=config.weight_decay)
    state = AnnealState(config.T0, config.r, 0, config.inner_patience, config.outer_patience)
    history = TrainHistory()
    betas = config.metric.beta_vector(d) if config.metric.kind == "macro_f_beta" else 1.0
    best_params = params.copy()
    epoch = 0

    while True:
        T = anneal_temperature(state) if annealing else None
        history.temperatures.append(T)
        history.phase_boundaries.append(epoch)
        phase_best = math.inf
        state.epochs_since_improve = 0
        best_before_phase = state.best_val_loss
        for _ in range(config.max_epochs_per_phase):
            _, train_loss = train_epoch(params, config, T, train, rng, optimizer)
            val_loss = evaluate_loss(params, config, val, T)
            if not math.isfinite(val_loss):
                raise TrainingError(f"non-finite validation loss at epoch {epoch}, T={T}")
            C = hard_confusion(params, val)
            scores = summary(C, betas)
            history.records.append({
                "epoch": epoch, "phase": state.k, "T": T, "train_loss": train_loss,
                "val_loss": val_loss, "val_f1": scores["f1"], "val_accuracy": scores["accuracy"],
                "val_mcc": scores["mcc"], "val_f_beta": scores["f_beta"],
            })
            if val_loss < state.best_val_loss:
                state.best_val_loss = val_loss
                best_params = params.copy()
                history.best_epoch, history.best_val_loss, history.best_T = epoch, val_loss, T
            epoch += 1
            if val_loss < phase_best:
                phase_best = val_loss
                state.epochs_since_improve = 0
            else:
                state.epochs_since_improve += 1
            if state.epochs_since_improve >= config.inner_patience:
                break
        if not annealing:
            history.stop_reason = "early_stopping" if state.epochs_since_improve >= config.inner_patience \
                else "max_epochs"
            break
        if state.best_val_loss < best_before_phase:
            state.steps_since_improve = 0
        else:
            state.steps_since_improve += 1
        if state.steps_since_improve >= config.outer_patience:
            history.stop_reason = "outer_patience"
            break
        if state.k + 1 >= config.max_phases:
            history.stop_reason = "max_phases"
            break
        state.k += 1

    result = FitResult(best_params, history, config)
    if data.test is not None:
        result.test_metrics = hard_metrics(best_params, data.test, betas)
    return result


# --------------------------------------------------------------------------
# grid search

def expand_grid(base: TrainConfig, grid: dict[str, Sequence]) -> list[TrainConfig]:
    """Cartesian product of ``grid`` over ``base`` with per-cell seeds from (seed, index)."""
    if not grid:
        return [base]
    keys = list(grid)
    if any(len(grid[k]) == 0 for k in keys):
        return []
    cells = []
    for index, values in enumerate(itertools.product(*(grid[k] for k in keys))):
        seed = int(np.random.SeedSequence([base.seed, index]).generate_state(1)[0])
        cells.append(replace(base, seed=seed, **dict(zip(keys, values))))
    return cells


def _fit_cell(args) -> dict:
    config, data = args
    result = fit(config, data)
    return {
        "config": config.to_dict(),
        "best_val_loss": result.history.best_val_loss,
        "best_epoch": result.history.best_epoch,
        "epochs": len(result.history.records),
        "stop_reason": result.history.stop_reason,
        "test_metrics": result.test_metrics,
    }


@dataclass
class GridResult:
    best_config: TrainConfig
    results: list[dict]

    def ranked(self) -> list[dict]:
        order = sorted(range(len(self.results)), key=lambda i: (self.results[i]["best_val_loss"], i))
        return [dict(self.results[i], grid_index=i, rank=r + 1) for r, i in enumerate(order)]


def grid_search(base: TrainConfig, grid: dict[str, Sequence], data: SplitData, parallel: int = 1) -> GridResult:
    """Fit every grid cell and keep the one with the lowest validation loss (grid order breaks ties)."""
    cells = expand_grid(base, grid)
    if not cells:
        raise ValueError("empty hyperparameter grid")
    jobs = [(c, data) for c in cells]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_fit_cell, jobs))
    else:
        results = [_fit_cell(j) for j in jobs]
    best = min(range(len(results)), key=lambda i: (results[i]["best_val_loss"], i))
    return GridResult(cells[best], results)


def default_grid(tabular: bool = True) -> dict[str, tuple]:
    """Hyperparameter ranges used for the tabular experiments."""
    grid = {"learning_rate": LR_GRID, "dropout": DROPOUT_GRID, "r": DECAY_GRID}
    if tabular:
        grid = {"batch_size": TABULAR_BATCH_GRID, **grid}
    return grid


def write_report(result: FitResult, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(result.report(), indent=2, default=float))
    return path
