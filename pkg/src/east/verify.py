"""Numerical checks of the soft-set construction and its statistical guarantees.

Every check returns a :class:`VerifyReport` whose ``passed`` flag is
recomputed from the recorded statistics and tolerances, so a report
read back from JSON can be re-judged without rerunning anything.

Population-level checks share one idea: draw a large synthetic sample
once, freeze a model, and tabulate each point's membership row.  That
finite sample then *is* the distribution: its exact confusion matrix is
the population truth and resampling from it is exact i.i.d. sampling.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import model as mlp
from .data import Dataset, gen_synthetic
from .heaviside import ThresholdParams, heaviside_linear, check_temperature
from .metrics import MetricSpec, evaluate, surrogate_loss
from .softset import (confusion, confusion_op, one_hot, predict_hard, predict_soft,
                      predict_soft_op)
from .trainer import AdamW, TrainConfig, train_epoch

T_LADDER = (0.2, 0.1, 0.05, 0.01, 1e-3, 1e-4)
MONOTONE_ATOL = 1e-12
POPULATION_SIZE = 200_000
POPULATION_T = 0.1
CHECKS = ("gt-convergence", "metric-convergence", "unbiasedness", "concentration", "rate",
          "tsoi-compat", "gradcheck")


@dataclass
class VerifyReport:
    name: str
    params: dict
    stats: dict
    tolerance: dict
    passed: bool = field(init=False)
    judge: Callable[[dict, dict], bool] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        self.passed = bool(self.judge(self.stats, self.tolerance))

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("judge")
        return _jsonable(out)

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{self.name}.json"
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def nonincreasing(values: Sequence[float], atol: float = MONOTONE_ATOL) -> bool:
    return all(b <= a + atol for a, b in zip(values, values[1:]))


# --------------------------------------------------------------------------
# pointwise and model-level convergence

def random_simplex_points(num_points: int, gap_min: float, rng: np.random.Generator,
                          d_range: tuple[int, int] = (2, 10)) -> list[np.ndarray]:
    """Uniform simplex draws (random ``d`` per point) whose top-2 gap is at least ``gap_min``."""
    points = []
    while len(points) < num_points:
        d = int(rng.integers(d_range[0], d_range[1] + 1))
        p = rng.dirichlet(np.ones(d))
        top = np.sort(p)[-2:]
        if top[1] - top[0] >= gap_min:
            points.append(p)
    return points


def check_gT_convergence(num_points: int = 1000, gap_min: float = 0.05,
                         T_ladder: Sequence[float] = T_LADDER, seed: int = 0,
                         final_tol: float = 1e-2) -> VerifyReport:
    if gap_min <= 0:
        raise ValueError("gap_min must be positive")
    ladder = [check_temperature(T) for T in T_ladder]
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("temperature ladder must be strictly decreasing")
    points = random_simplex_points(num_points, gap_min, np.random.default_rng(seed))
    deviations = []
    for T in ladder:
        worst = 0.0
        for p in points:
            worst = max(worst, float(np.abs(predict_soft(p, T) - predict_hard(p)).max()))
        deviations.append(worst)
    return VerifyReport(
        "gt-convergence",
        {"num_points": num_points, "gap_min": gap_min, "T_ladder": ladder, "seed": seed},
        {"max_deviation": deviations},
        {"final": final_tol, "monotone_atol": MONOTONE_ATOL},
        judge=lambda s, t: nonincreasing(s["max_deviation"], t["monotone_atol"])
        and s["max_deviation"][-1] < t["final"],
    )


def random_model(input_dim: int, d: int, seed: int, gain: float = math.sqrt(6.0)) -> mlp.MlpParams:
    """Untrained MLP with weights scaled by ``gain`` (``sqrt(6)`` gives He-uniform bounds).

    The default training init shrinks activations layer by layer, leaving
    near-uniform outputs whose top-2 gaps are tiny.
    """
    params = mlp.init(input_dim, d, 0.0, seed)
    for w in params.weights:
        w *= gain
    return params


def _soft_or_hard(p: np.ndarray, T: float | None) -> np.ndarray:
    return predict_hard(p) if T is None else predict_soft(p, T)


def top2_gaps(p: np.ndarray) -> np.ndarray:
    top = np.sort(p, axis=1)[:, -2:]
    return top[:, 1] - top[:, 0]


def check_metric_convergence(dataset: Dataset, params: mlp.MlpParams,
                             T_ladder: Sequence[float] = T_LADDER,
                             metric: MetricSpec = MetricSpec(), final_tol: float = 1e-3) -> VerifyReport:
    p = mlp.predict_proba(params, dataset.X)
    hard = evaluate(metric, confusion(dataset.y, predict_hard(p), dataset.d))
    gaps = []
    for T in T_ladder:
        soft = evaluate(metric, confusion(dataset.y, predict_soft(p, T), dataset.d))
        gaps.append(abs(soft - hard))
    gap_q = np.quantile(top2_gaps(p), [0.0, 0.01, 0.5])
    return VerifyReport(
        f"metric-convergence-{metric.name}",
        {"n": dataset.n, "d": dataset.d, "T_ladder": list(T_ladder), "metric": metric.to_dict()},
        {"hard_metric": hard, "abs_gap": gaps,
         "top2_gap_quantiles": {"min": gap_q[0], "q01": gap_q[1], "median": gap_q[2]}},
        {"final": final_tol, "monotone_atol": MONOTONE_ATOL},
        judge=lambda s, t: s["abs_gap"][-1] < t["final"]
        and nonincreasing(s["abs_gap"][1:], t["monotone_atol"]),
    )


# --------------------------------------------------------------------------
# population-level checks

@dataclass
class Population:
    """A frozen sample with each point's membership row precomputed."""

    labels: np.ndarray  # 1..d
    memberships: np.ndarray  # (N, d)
    d: int
    T: float | None

    @property
    def size(self) -> int:
        return self.labels.size

    def confusion(self, idx=None) -> np.ndarray:
        """Confusion matrix of the points ``idx`` (all points by default), scaled to sum 1."""
        if idx is None:
            y, g = self.labels, self.memberships
        else:
            y, g = self.labels[idx], self.memberships[idx]
        return one_hot(y, self.d).T @ g / y.size


def frozen_model(d: int, input_dim: int, seed: int, separation: float = 1.5,
                 epochs: int = 3) -> mlp.MlpParams:
    """A briefly CE-trained MLP so predictions are informative but imperfect."""
    ds = gen_synthetic(d, 4000, np.full(d, 1.0 / d), separation, seed + 1, n_features=input_dim)
    config = TrainConfig(loss="ce", batch_size=256, dropout=0.0)
    params = mlp.init(input_dim, d, 0.0, seed)
    rng = np.random.default_rng(seed)
    opt = AdamW(config.learning_rate, weight_decay=config.weight_decay)
    for _ in range(epochs):
        train_epoch(params, config, None, ds, rng, opt)
    return params


def make_population(d: int = 3, size: int = POPULATION_SIZE, seed: int = 0,
                    T: float | None = POPULATION_T, separation: float = 1.5,
                    params: mlp.MlpParams | None = None) -> Population:
    ds = gen_synthetic(d, size, np.full(d, 1.0 / d), separation, seed)
    if params is None:
        params = frozen_model(d, ds.input_dim, seed, separation)
    p = mlp.predict_proba(params, ds.X)
    return Population(ds.y, _soft_or_hard(p, T), d, T)


def _pop_params(pop: Population) -> dict:
    return {"population_size": pop.size, "d": pop.d, "T": pop.T}


def check_unbiasedness(population: Population, batch_sizes: Sequence[int] = (50, 200, 1000, 5000),
                       num_resamples: int = 500, metric: MetricSpec = MetricSpec(), seed: int = 0,
                       final_tol: float = 0.01, se_multiplier: float = 2.0) -> VerifyReport:
    """Mean of ``M`` over subsamples drawn without replacement versus ``M`` on the population.

    Monotonicity of ``|bias|`` is judged up to ``se_multiplier`` Monte Carlo
    standard errors of the difference between neighbouring batch sizes.
    """
    truth = evaluate(metric, population.confusion())
    rng = np.random.default_rng(seed)
    bias, se = [], []
    for n in batch_sizes:
        if not 1 <= n <= population.size:
            raise ValueError(f"batch size {n} outside 1..{population.size}")
        if n == population.size:
            values = np.array([evaluate(metric, population.confusion(rng.permutation(population.size)))])
        else:
            values = np.array([evaluate(metric, population.confusion(rng.choice(population.size, n, replace=False)))
                               for _ in range(num_resamples)])
        bias.append(float(values.mean() - truth))
        se.append(float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0)

    def judge(s, t):
        b, e = np.abs(s["bias"]), s["mc_standard_error"]
        steps = all(b[i + 1] <= b[i] + t["se_multiplier"] * math.hypot(e[i], e[i + 1]) + t["monotone_atol"]
                    for i in range(len(b) - 1))
        return steps and b[-1] < t["final"]

    return VerifyReport(
        f"unbiasedness-{metric.name}",
        {**_pop_params(population), "batch_sizes": list(batch_sizes), "num_resamples": num_resamples,
         "metric": metric.to_dict(), "seed": seed},
        {"population_metric": truth, "bias": bias, "mc_standard_error": se},
        {"final": final_tol, "se_multiplier": se_multiplier, "monotone_atol": MONOTONE_ATOL},
        judge=judge,
    )


def concentration_bound(d: int, n: int, delta: float) -> float:
    """Hoeffding plus a union bound over the ``d*d`` entries of a scaled confusion matrix."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return math.sqrt(math.log(2 * d * d / delta) / (2 * n))


def check_concentration(population: Population, n: int = 500, delta: float = 0.05,
                        num_trials: int = 2000, seed: int = 0) -> VerifyReport:
    bound = concentration_bound(population.d, n, delta)
    truth = population.confusion()
    rng = np.random.default_rng(seed)
    deviations = np.array([np.abs(population.confusion(rng.integers(0, population.size, n)) - truth).max()
                           for _ in range(num_trials)])
    return VerifyReport(
        "concentration",
        {**_pop_params(population), "n": n, "delta": delta, "num_trials": num_trials, "seed": seed},
        {"bound": bound, "violation_fraction": float((deviations > bound).mean()),
         "max_deviation": float(deviations.max()), "median_deviation": float(np.median(deviations))},
        {"delta": delta, "slack": 2 * math.sqrt(delta * (1 - delta) / num_trials)},
        judge=lambda s, t: s["violation_fraction"] <= t["delta"] + t["slack"],
    )


def check_rate(population: Population, metric: MetricSpec = MetricSpec(),
               n_ladder: Sequence[int] = (250, 1000, 4000), num_trials: int = 500, seed: int = 0,
               max_ratio: float = 2.5) -> VerifyReport:
    truth = evaluate(metric, population.confusion())
    rng = np.random.default_rng(seed)
    medians = []
    for n in n_ladder:
        errs = [abs(evaluate(metric, population.confusion(rng.integers(0, population.size, n))) - truth)
                for _ in range(num_trials)]
        medians.append(float(np.median(errs)))
    normalized = [m * math.sqrt(n) for m, n in zip(medians, n_ladder)]

    def judge(s, t):
        norm = s["median_times_sqrt_n"]
        if max(norm) == 0.0:
            return True
        return min(norm) > 0 and max(norm) / min(norm) < t["max_ratio"]

    return VerifyReport(
        f"rate-{metric.name}",
        {**_pop_params(population), "metric": metric.to_dict(), "n_ladder": list(n_ladder),
         "num_trials": num_trials, "seed": seed},
        {"population_metric": truth, "median_abs_error": medians, "median_times_sqrt_n": normalized},
        {"max_ratio": max_ratio},
        judge=judge,
    )


# --------------------------------------------------------------------------
# closed-form identity at T = 0.2

def check_tsoi_compat(tau_grid: Sequence[float] | None = None, tol: float = 1e-12) -> VerifyReport:
    grid = np.arange(1, 100) / 100 if tau_grid is None else np.asarray(tau_grid, dtype=np.float64)
    T = 0.2
    width_mismatch = 0
    anchor_err = 0.0
    for tau in grid:
        tp = ThresholdParams.from_threshold(float(tau), T)
        if tp.tau_m != min(tau, 1.0 - tau):
            width_mismatch += 1
        xs = np.array([0.0, tp.lower, tau, tp.upper, 1.0])
        ys = np.array([0.0, T, 0.5, 1.0 - T, 1.0])
        anchor_err = max(anchor_err, float(np.abs(heaviside_linear(xs, tau, T) - ys).max()))
    return VerifyReport(
        "tsoi-compat",
        {"grid_size": int(grid.size), "T": T},
        {"width_mismatches": width_mismatch, "max_anchor_error": anchor_err},
        {"anchor": tol},
        judge=lambda s, t: s["width_mismatches"] == 0 and s["max_anchor_error"] <= t["anchor"],
    )


# --------------------------------------------------------------------------
# gradients of the surrogate losses with respect to network parameters

GRAD_METRICS = (MetricSpec("macro_f_beta", 1.0), MetricSpec("accuracy"), MetricSpec("mcc"))


def _loss_fn(params: mlp.MlpParams, slot: int, X: np.ndarray, y: np.ndarray, d: int,
             metric: MetricSpec, T: float, direction: np.ndarray | None = None):
    """Surrogate loss as a function of one parameter tensor (or a step along ``direction``)."""
    base = params.arrays()

    def fn(x: ad.Tensor) -> ad.Tensor:
        leaves = [ad.Tensor(a) for a in base]
        if direction is None:
            leaves[slot] = x
        else:
            leaves[slot] = ad.Tensor(base[slot]) + x * direction
        p = ad.softmax(mlp.logits_op(leaves, X))
        return surrogate_loss(metric, confusion_op(y, predict_soft_op(p, T), d))

    return fn


def gradcheck_network(params: mlp.MlpParams, X: np.ndarray, y: np.ndarray, d: int, metric: MetricSpec,
                      T: float, rng: np.random.Generator, coords_per_tensor: int | None,
                      directions_per_tensor: int, eps: float = 1e-5, rel_tol: float = 1e-4,
                      margin: float = 3.0, floor: float = 1e-12) -> dict:
    """Finite-difference check of every parameter tensor.

    ``coords_per_tensor=None`` checks every coordinate.  Each random
    direction perturbs the whole tensor at once, so together they cover
    every parameter even when coordinates are sampled.
    """
    checked = skipped = 0
    worst = 0.0
    worst_pair = (0.0, 0.0)
    for slot, arr in enumerate(params.arrays()):
        if coords_per_tensor is None:
            idx = None
        else:
            idx = rng.choice(arr.size, min(coords_per_tensor, arr.size), replace=False)
        reports = [ad.grad_check(_loss_fn(params, slot, X, y, d, metric, T), arr, eps, rel_tol, idx,
                                 floor, margin)]
        for _ in range(directions_per_tensor):
            v = rng.standard_normal(arr.shape)
            v /= np.linalg.norm(v)
            reports.append(ad.grad_check(_loss_fn(params, slot, X, y, d, metric, T, v), np.zeros(1), eps,
                                         rel_tol, None, floor, margin))
        for r in reports:
            checked += r.checked
            skipped += int(r.skipped.sum())
            if r.max_rel_error > worst:
                j = int(np.argmax(np.where(r.skipped, -1.0, r.rel_error)))
                worst, worst_pair = r.max_rel_error, (float(r.analytic[j]), float(r.numeric[j]))
    return {"checked": checked, "skipped": skipped, "max_rel_error": worst, "worst_component": worst_pair}


def check_gradcheck(num_batches: int = 20, batch_size: int = 32, d: int = 3, input_dim: int = 4,
                    T: float = 0.1, seed: int = 0, hidden: tuple[int, int, int] = mlp.HIDDEN_WIDTHS,
                    coords_per_tensor: int | None = 4, directions_per_tensor: int = 2,
                    narrow_hidden: tuple[int, int, int] | None = (8, 6, 4),
                    metrics: Sequence[MetricSpec] = GRAD_METRICS, rel_tol: float = 1e-4,
                    eps: float = 1e-5, margin: float = 3.0) -> VerifyReport:
    """Analytic versus central-difference gradients of the soft losses w.r.t. MLP parameters.

    Each batch draws fresh data and a fresh network.  The full-width
    network is probed by sampled coordinates plus whole-tensor random
    directions; the optional narrow network is checked coordinate by
    coordinate.  Components within ``margin*eps`` of a breakpoint are
    skipped and counted.
    """
    rng = np.random.default_rng(seed)
    per_metric = {m.name: {"checked": 0, "skipped": 0, "max_rel_error": 0.0, "worst_component": (0.0, 0.0)}
                  for m in metrics}
    nets = [(hidden, coords_per_tensor, directions_per_tensor)]
    if narrow_hidden is not None:
        nets.append((narrow_hidden, None, 0))
    for _ in range(num_batches):
        X = rng.standard_normal((batch_size, input_dim))
        y = rng.integers(1, d + 1, batch_size)
        for widths, coords, dirs in nets:
            params = mlp.init(input_dim, d, 0.0, int(rng.integers(2**31)), widths)
            # wider logits spread the probabilities so every soft-step segment is exercised
            params.weights[-1] *= 4.0
            for m in metrics:
                res = gradcheck_network(params, X, y, d, m, T, rng, coords, dirs, eps, rel_tol, margin)
                acc = per_metric[m.name]
                acc["checked"] += res["checked"]
                acc["skipped"] += res["skipped"]
                if res["max_rel_error"] > acc["max_rel_error"]:
                    acc["max_rel_error"], acc["worst_component"] = res["max_rel_error"], res["worst_component"]
    return VerifyReport(
        "gradcheck",
        {"num_batches": num_batches, "batch_size": batch_size, "d": d, "input_dim": input_dim, "T": T,
         "seed": seed, "hidden": list(hidden), "narrow_hidden": list(narrow_hidden or []),
         "coords_per_tensor": coords_per_tensor, "directions_per_tensor": directions_per_tensor,
         "eps": eps, "margin": margin},
        {"per_metric": per_metric,
         "max_rel_error": max(v["max_rel_error"] for v in per_metric.values())},
        {"rel_error": rel_tol},
        judge=lambda s, t: s["max_rel_error"] <= t["rel_error"]
        and all(v["checked"] > 0 for v in s["per_metric"].values()),
    )


# --------------------------------------------------------------------------
# driver

def run_checks(names: Sequence[str], seed: int = 0, population_size: int = POPULATION_SIZE,
               n: int = 500, delta: float = 0.05) -> list[VerifyReport]:
    """Run the named checks with their default settings (``all`` expands to every check)."""
    names = list(CHECKS) if "all" in names else list(names)
    unknown = set(names) - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown checks: {sorted(unknown)}")
    reports: list[VerifyReport] = []
    population = None
    metrics = (MetricSpec("macro_f_beta", 1.0), MetricSpec("accuracy"))
    for name in names:
        if name in ("unbiasedness", "concentration", "rate") and population is None:
            population = make_population(3, population_size, seed)
        if name == "gt-convergence":
            reports.append(check_gT_convergence(seed=seed))
        elif name == "metric-convergence":
            ds = gen_synthetic(3, 2000, [1 / 3] * 3, 1.5, seed)
            params = random_model(ds.input_dim, 3, seed)
            for m in (*metrics, MetricSpec("mcc")):
                reports.append(check_metric_convergence(ds, params, metric=m))
        elif name == "unbiasedness":
            reports += [check_unbiasedness(population, metric=m, seed=seed) for m in metrics]
        elif name == "concentration":
            reports.append(check_concentration(population, n, delta, seed=seed))
        elif name == "rate":
            reports += [check_rate(population, m, seed=seed) for m in metrics]
        elif name == "tsoi-compat":
            reports.append(check_tsoi_compat())
        elif name == "gradcheck":
            reports.append(check_gradcheck(seed=seed))
    return reports
