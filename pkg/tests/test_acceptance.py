"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest

from east.data import gen_synthetic
from east.heaviside import ThresholdParams, heaviside_linear, segment_values
from east.metrics import MetricSpec, accuracy, macro_f_beta, mcc, precision_recall
from east.trainer import TrainConfig, fit, prepare
from east.verify import (check_concentration, check_gradcheck, check_gT_convergence, check_metric_convergence,
                         check_rate, check_tsoi_compat, make_population, random_model)

import oracle


@pytest.fixture()
def announce(capsys):
    def emit(number, ok, detail, elapsed, limit):
        within = elapsed < limit
        verdict = "PASS" if ok and within else "FAIL"
        with capsys.disabled():
            print(f"\n{verdict} criterion {number}: {detail} [{elapsed:.1f}s, limit {limit:g}s]")
        assert ok, detail
        assert within, f"runtime {elapsed:.1f}s exceeds {limit}s"
    return emit


@pytest.fixture(scope="module")
def population():
    return make_population(d=3)


def test_criterion_01_anchors_and_continuity(announce):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    anchor_err = join_err = 0.0
    for _ in range(1000):
        tau = rng.uniform(0.001, 0.999)
        T = rng.uniform(1e-4, 0.4)
        tp = ThresholdParams.from_threshold(tau, T)
        xs = np.array([0.0, tp.lower, tau, tp.upper, 1.0])
        ys = np.array([0.0, T, 0.5, 1.0 - T, 1.0])
        anchor_err = max(anchor_err, np.abs(heaviside_linear(xs, tau, T) - ys).max())
        lo, mid, _ = segment_values(tp.lower, tau, T)
        _, mid2, hi = segment_values(tp.upper, tau, T)
        join_err = max(join_err, abs(lo - mid), abs(mid2 - hi))
    ok = anchor_err <= 1e-12 and join_err <= 1e-12
    announce(1, ok, f"max anchor error {anchor_err:.2e}, max join gap {join_err:.2e}",
             time.perf_counter() - start, 1)


def test_criterion_02_width_at_default_temperature(announce):
    start = time.perf_counter()
    report = check_tsoi_compat()
    announce(2, report.passed and report.params["grid_size"] == 99,
             f"{report.stats['width_mismatches']} width mismatches on 99 thresholds", time.perf_counter() - start, 1)


def test_criterion_03_membership_convergence(announce):
    start = time.perf_counter()
    report = check_gT_convergence(num_points=1000, gap_min=0.05)
    devs = report.stats["max_deviation"]
    announce(3, report.passed, f"max deviation ladder {[f'{v:.1e}' for v in devs]}",
             time.perf_counter() - start, 5)


def test_criterion_04_metric_convergence(announce):
    start = time.perf_counter()
    ds = gen_synthetic(3, 2000, [1 / 3] * 3, 1.5, seed=0)
    params = random_model(ds.input_dim, 3, seed=0)
    gaps = {}
    for spec in (MetricSpec("macro_f_beta", 1.0), MetricSpec("accuracy"), MetricSpec("mcc")):
        report = check_metric_convergence(ds, params, metric=spec)
        gaps[spec.name] = report.stats["abs_gap"][-1]
    ok = all(g < 1e-3 for g in gaps.values())
    announce(4, ok, "gap at T=1e-4: " + ", ".join(f"{k} {v:.1e}" for k, v in gaps.items()),
             time.perf_counter() - start, 30)


def test_criterion_05_gradients(announce):
    start = time.perf_counter()
    report = check_gradcheck(num_batches=20, margin=3.0)
    per_metric = report.stats["per_metric"]
    checked = sum(v["checked"] for v in per_metric.values())
    name = max(per_metric, key=lambda k: per_metric[k]["max_rel_error"])
    analytic, numeric = per_metric[name]["worst_component"]
    announce(5, report.passed, f"max relative error {report.stats['max_rel_error']:.2e} over {checked} components "
                               f"(worst: {name}, analytic {analytic:.6e}, numeric {numeric:.6e})",
             time.perf_counter() - start, 120)


def test_criterion_06_metric_oracle(announce):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(2, 6))
        C = rng.integers(0, 20, size=(d, d))
        C[0, 0] += 1
        betas = rng.uniform(0.1, 5.0, d)
        A = C.astype(float)
        pairs = [(macro_f_beta(A, betas), oracle.macro_f_beta(C.tolist(), betas.tolist())),
                 (accuracy(A), oracle.accuracy(C.tolist())),
                 (mcc(A), oracle.mcc(C.tolist()))]
        for k in range(d):
            pairs += zip(precision_recall(A, k + 1), oracle.precision_recall(C.tolist(), k))
        worst = max(worst, max(abs(a - b) for a, b in pairs))
    announce(6, worst <= 1e-10, f"max discrepancy {worst:.2e} over 200 matrices", time.perf_counter() - start, 5)


def test_criterion_07_concentration(announce, population):
    start = time.perf_counter()
    report = check_concentration(population, n=500, delta=0.05, num_trials=2000)
    s = report.stats
    announce(7, report.passed, f"violation rate {s['violation_fraction']:.4f} vs bound {s['bound']:.4f}",
             time.perf_counter() - start, 60)


def test_criterion_08_rate(announce, population):
    start = time.perf_counter()
    ratios = {}
    for spec in (MetricSpec("macro_f_beta", 1.0), MetricSpec("accuracy")):
        report = check_rate(population, spec, n_ladder=(250, 1000, 4000), num_trials=500)
        norm = report.stats["median_times_sqrt_n"]
        ratios[spec.name] = max(norm) / min(norm)
    ok = all(r < 2.5 for r in ratios.values())
    announce(8, ok, "max/min of median*sqrt(n): " + ", ".join(f"{k} {v:.2f}" for k, v in ratios.items()),
             time.perf_counter() - start, 120)


@pytest.mark.slow
def test_criterion_09_imbalance(announce):
    start = time.perf_counter()
    data, _ = prepare(gen_synthetic(2, 8000, [0.95, 0.05], 1.5, seed=2024), seed=0)
    scores = {"ce": [], "east": []}
    for seed in range(10):
        for loss in scores:
            cfg = TrainConfig(loss=loss, batch_size=512, inner_patience=5, outer_patience=3,
                              max_epochs_per_phase=30, seed=seed)
            m = fit(cfg, data).test_metrics
            scores[loss].append((m["per_class"][1]["f1"], m["f1"]))
    ce, east = (np.median(np.array(scores[k]), axis=0) for k in ("ce", "east"))
    announce(9, east[0] - ce[0] >= 0.03,
             f"median positive-class F1 {east[0]:.3f} vs CE {ce[0]:.3f} (macro {east[1]:.3f} vs {ce[1]:.3f})",
             time.perf_counter() - start, 1200)


@pytest.mark.slow
def test_criterion_10_beta_steering(announce):
    start = time.perf_counter()
    ds = gen_synthetic(3, 3000, [0.4, 0.3, 0.3], 1.5, seed=100)
    rows = {0.25: [], 5.0: []}
    for seed in range(10):
        data, _ = prepare(ds, seed)
        for beta in rows:
            cfg = TrainConfig(metric=MetricSpec("macro_f_beta", (1.0, beta, 1.0)), batch_size=256,
                              inner_patience=3, outer_patience=3, max_epochs_per_phase=20, seed=seed)
            m = fit(cfg, data).test_metrics
            target = m["per_class"][1]
            rows[beta].append((target["precision"], target["recall"], m["f1"]))
    low, high = (np.median(np.array(rows[b]), axis=0) for b in (0.25, 5.0))
    ok = low[0] > high[0] and low[1] < high[1] and abs(low[2] - high[2]) < 0.05
    announce(10, ok, f"beta 0.25: P {low[0]:.3f} R {low[1]:.3f} F1 {low[2]:.3f}; "
                     f"beta 5: P {high[0]:.3f} R {high[1]:.3f} F1 {high[2]:.3f}",
             time.perf_counter() - start, 1800)


def test_criterion_11_annealing(announce):
    start = time.perf_counter()
    data, _ = prepare(gen_synthetic(2, 1000, [0.8, 0.2], 2.0, seed=11), seed=0)
    cfg = TrainConfig(inner_patience=0, outer_patience=100, max_phases=8, T0=0.2, r=0.9, seed=5,
                      batch_size=128)
    a, b = fit(cfg, data), fit(cfg, data)
    h = a.history
    schedule = h.temperatures == [0.2 * 0.9**k for k in range(8)]
    per_epoch = h.phase_boundaries == list(range(8)) and [r["T"] for r in h.records] == h.temperatures
    same = h.records == b.history.records and all(
        x.tobytes() == y.tobytes() for x, y in zip(a.params.arrays(), b.params.arrays()))
    announce(11, schedule and per_epoch and same,
             f"schedule exact {schedule}, one epoch per phase {per_epoch}, bit-identical rerun {same}",
             time.perf_counter() - start, 60)
