import json
import math

import numpy as np
import pytest

from east.data import gen_synthetic
from east.metrics import MetricSpec
from east.verify import (CHECKS, Population, check_concentration, check_gradcheck, check_gT_convergence,
                         check_metric_convergence, check_rate, check_tsoi_compat, check_unbiasedness,
                         concentration_bound, make_population, nonincreasing, random_model, run_checks)


@pytest.fixture(scope="module")
def small_population():
    return make_population(3, 20_000, seed=5)


def perfect_population(n=2000, d=3, seed=0):
    y = np.random.default_rng(seed).integers(1, d + 1, n)
    return Population(y, np.eye(d)[y - 1], d, None)


def test_bound_example():
    assert concentration_bound(3, 500, 0.05) == pytest.approx(0.07672094910420592, abs=1e-15)
    assert concentration_bound(3, 500, 0.05) == pytest.approx(math.sqrt(math.log(360) / 1000), rel=1e-15)
    with pytest.raises(ValueError):
        concentration_bound(3, 500, 1.0)


def test_nonincreasing_tolerance():
    assert nonincreasing([3, 2, 2 + 1e-13, 1])
    assert not nonincreasing([1, 2])


def test_gt_convergence_passes_and_reports_ladder():
    report = check_gT_convergence(num_points=200, seed=3)
    assert report.passed and len(report.stats["max_deviation"]) == 6
    assert report.stats["max_deviation"][-1] < 1e-2


def test_gt_convergence_rejects_bad_ladder():
    with pytest.raises(ValueError):
        check_gT_convergence(num_points=5, T_ladder=(0.1, 0.2))
    with pytest.raises(ValueError):
        check_gT_convergence(num_points=5, gap_min=0.0)


def test_metric_convergence_on_random_model():
    ds = gen_synthetic(3, 2000, [1 / 3] * 3, 1.5, seed=0)
    report = check_metric_convergence(ds, random_model(ds.input_dim, 3, seed=0))
    assert report.passed, report.stats
    assert report.stats["top2_gap_quantiles"]["median"] > 0.01


def test_population_confusion_sums_to_one(small_population):
    assert small_population.confusion().sum() == pytest.approx(1.0, abs=1e-12)
    assert small_population.confusion([0, 1, 2]).sum() == pytest.approx(1.0, abs=1e-12)


def test_unbiasedness_full_population_has_zero_bias():
    pop = make_population(3, 3000, seed=1)
    report = check_unbiasedness(pop, batch_sizes=(3000,), num_resamples=3)
    assert report.stats["bias"][0] == pytest.approx(0.0, abs=1e-12) and report.passed


def test_unbiasedness_constant_metric():
    report = check_unbiasedness(perfect_population(), batch_sizes=(10, 100), num_resamples=20)
    assert report.stats["bias"] == [0.0, 0.0] and report.passed


def test_unbiasedness_rejects_oversized_batch():
    with pytest.raises(ValueError):
        check_unbiasedness(perfect_population(100), batch_sizes=(101,))


def test_unbiasedness_on_trained_population(small_population):
    report = check_unbiasedness(small_population, num_resamples=200, batch_sizes=(50, 200, 1000))
    assert report.passed, report.stats


def test_concentration(small_population):
    report = check_concentration(small_population, num_trials=500)
    assert report.passed and report.stats["bound"] == pytest.approx(0.07672094910420592, abs=1e-15)


def test_rate(small_population):
    report = check_rate(small_population, num_trials=300)
    assert report.passed, report.stats


def test_rate_of_constant_metric_is_degenerate_pass():
    assert check_rate(perfect_population(), MetricSpec("accuracy"), num_trials=5).passed


def test_tsoi_compat():
    report = check_tsoi_compat()
    assert report.passed and report.params["grid_size"] == 99 and report.stats["width_mismatches"] == 0


def test_gradcheck_small():
    report = check_gradcheck(num_batches=1, hidden=(32, 16, 8), narrow_hidden=(5, 4, 3))
    assert report.passed, report.stats
    assert all(v["checked"] > 0 for v in report.stats["per_metric"].values())


def test_report_json_round_trip(tmp_path):
    report = check_tsoi_compat(tau_grid=[0.2, 0.5])
    path = report.write(tmp_path)
    doc = json.loads(path.read_text())
    assert path.name == "tsoi-compat.json" and doc["passed"] is True and "judge" not in doc
    assert doc == report.to_dict() and report.line().startswith("PASS")


def test_run_checks_names():
    assert [r.name for r in run_checks(["tsoi-compat"])] == ["tsoi-compat"]
    with pytest.raises(ValueError):
        run_checks(["nope"])
    assert "gradcheck" in CHECKS
