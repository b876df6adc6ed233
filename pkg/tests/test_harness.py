"""Tests for the ensemble runner and CLT reports.

Synthetic records are built so that the normalized statistic W equals
the midpoint quantiles of N(0, 1); every acceptance check then has a
known outcome.
"""

import math
from unittest.mock import patch

import numpy as np
import pytest
from scipy import stats

from loctime import harness
from loctime.errors import DataError, UsageError
from loctime.harness import (
    L2_CONSTANT,
    L3_CONSTANT,
    clt_report,
    evaluate_path,
    evaluate_safely,
    load_acceptance,
    normalize_l3,
    parallel_map,
    run_ensemble,
    sweep,
    trends,
)
from loctime.models import ExperimentConfig, PathRecord, RecordStatus

H_LIST = [0.4, 0.2, 0.1]
QUANTILES = stats.norm.ppf((np.arange(1, 1001) - 0.5) / 1000)
V2_MEAN = 8.0 / (3.0 * math.sqrt(2.0 * math.pi))


def synthetic_records(v3=1.5, v2=V2_MEAN, t=1.0):
    records = []
    for i, q in enumerate(QUANTILES):
        records.append(PathRecord(
            path_index=i,
            v2=v2,
            v3=v3,
            f3={h: q * h * h * L3_CONSTANT * math.sqrt(v3) for h in H_LIST},
            f2={h: 4.0 * t * h + q * h ** 1.5 * L2_CONSTANT * math.sqrt(v2) for h in H_LIST},
            modulus_sup={h: 2.0 * math.sqrt(h) for h in H_LIST},
        ))
    return records


@pytest.fixture(scope="module")
def records():
    return synthetic_records()


@pytest.fixture
def sweep_config():
    return ExperimentConfig(h_list=H_LIST, n_paths=1000, compute_modulus_sup=True)


@pytest.fixture
def small_config():
    return ExperimentConfig(
        h_list=H_LIST, n_paths=6, n_steps=256, bin_ratio=4, master_seed=5,
        compute_modulus_sup=True, emitted=64, min_records=8,
    )


class TestNormalize:
    def test_unit_scale(self):
        record = PathRecord(path_index=0, v3=1.0 / 192.0, f3={0.1: 0.02})
        assert normalize_l3(record, 0.1, 1.0) == pytest.approx(2.0)

    def test_rejects_non_positive_v3(self):
        with pytest.raises(DataError):
            normalize_l3(PathRecord(path_index=0, v3=0.0, f3={0.1: 0.02}), 0.1, 1.0)


class TestCltReport:
    @pytest.mark.parametrize("p", [2, 3])
    def test_gaussian_quantiles_pass(self, records, p):
        entry = clt_report(records, 0.1, p, 1.0)
        assert entry.ks_d <= 1.0 / 2000 + 1e-9
        assert entry.mean == pytest.approx(0.0, abs=1e-12)
        assert entry.passed, entry.checks

    def test_p3_ratio_and_centering(self, records):
        entry = clt_report(records, 0.1, 3, 1.0)
        assert entry.second_moment_target == pytest.approx(192.0)
        assert entry.second_moment_ratio / 192.0 == pytest.approx(1.0, abs=0.01)
        assert entry.centering_target == 0.0
        assert {"second_moment_ratio", "centering"} <= set(entry.checks)

    def test_p2_ratio_reported_not_gated(self, records):
        entry = clt_report(records, 0.1, 2, 1.0)
        assert entry.second_moment_target == pytest.approx(64.0 / 3.0)
        assert entry.second_moment_ratio / entry.second_moment_target == pytest.approx(1.0, abs=0.01)
        assert "second_moment_ratio" not in entry.checks
        assert entry.centering_mean == pytest.approx(4.0)

    def test_modulus_sup_mean(self, records):
        assert clt_report(records, 0.1, 3, 1.0).modulus_sup_mean == pytest.approx(2.0 * math.sqrt(0.1))

    def test_degenerate_statistic_fails(self):
        flat = [r.model_copy(update={"f3": {0.1: 0.0}}) for r in synthetic_records()]
        entry = clt_report(flat, 0.1, 3, 1.0)
        assert entry.ks_d == pytest.approx(0.5)
        assert entry.checks["ks_d"] is False
        assert not entry.passed

    def test_record_order_does_not_matter(self, records):
        shuffled = list(records)
        np.random.default_rng(0).shuffle(shuffled)
        assert clt_report(shuffled, 0.2, 3, 1.0).model_dump() == clt_report(records, 0.2, 3, 1.0).model_dump()

    def test_excluded_records_are_counted(self, records):
        extra = [PathRecord(path_index=2000 + i, status=RecordStatus.EXCLUDED, reason="x") for i in range(5)]
        entry = clt_report(records + extra, 0.1, 3, 1.0)
        assert entry.n == 1000
        assert entry.n_excluded == 5

    def test_too_few_records(self, records):
        with pytest.raises(UsageError):
            clt_report(records[:10], 0.1, 3, 1.0)

    def test_bad_p(self, records):
        with pytest.raises(UsageError):
            clt_report(records, 0.1, 4, 1.0)


class TestTrends:
    def test_sup_slope(self, records):
        entries = [clt_report(records, h, 3, 1.0) for h in H_LIST]
        summary = trends(entries, (0.35, 0.65))
        assert summary.modulus_sup_slope == pytest.approx(0.5)
        assert summary.modulus_sup_slope_ok
        assert summary.ks_d_non_increasing
        assert summary.ratio_toward_target

    def test_rising_ks_is_flagged(self, records):
        entries = [clt_report(records, h, 3, 1.0) for h in H_LIST]
        entries[-1] = entries[-1].model_copy(update={"ks_d": 0.2})
        assert not trends(entries, (0.35, 0.65)).ks_d_non_increasing

    def test_no_slope_without_sups(self, records):
        bare = [r.model_copy(update={"modulus_sup": {}}) for r in records]
        entries = [clt_report(bare, h, 3, 1.0) for h in H_LIST]
        summary = trends(entries, (0.35, 0.65))
        assert summary.modulus_sup_slope is None
        assert summary.modulus_sup_slope_ok is None


class TestSweep:
    @pytest.mark.parametrize("p", [2, 3])
    def test_passes(self, sweep_config, records, p):
        report = sweep(sweep_config, p, records)
        assert set(report.entries) == {repr(h) for h in H_LIST}
        assert report.checks["self_lp_mean"]
        assert report.checks["modulus_sup_slope"]
        assert report.passed, report.checks
        assert [e.h for e in report.gated_entries()] == [0.1]

    def test_ratio_trend_only_for_p3(self, sweep_config, records):
        assert "ratio_trend" in sweep(sweep_config, 3, records).checks
        assert "ratio_trend" not in sweep(sweep_config, 2, records).checks

    def test_oracle_mismatch_fails(self, sweep_config):
        report = sweep(sweep_config, 3, synthetic_records(v3=1.0 / 192.0))
        assert report.checks["self_lp_mean"] is False
        assert not report.passed

    def test_echoes_config(self, sweep_config, records):
        report = sweep(sweep_config, 3, records)
        assert report.config == sweep_config.audit_dict()
        assert "out_dir" not in report.config

    def test_needs_three_bandwidths(self, records):
        config = ExperimentConfig(h_list=[0.2, 0.1])
        with pytest.raises(UsageError):
            sweep(config, 3, records)

    def test_acceptance_file(self):
        acceptance = load_acceptance()
        assert acceptance["clt"]["ks_d"] == 0.05
        assert acceptance["scaling"]["modulus_sup_slope"] == [0.35, 0.65]


class TestParallelMap:
    @pytest.mark.parametrize("threads", [1, 2])
    def test_preserves_order(self, threads):
        assert list(parallel_map(abs, [-3, 1, -2, 5], threads, "test", progress=False)) == [3, 1, 2, 5]

    def test_worker_config_required(self):
        with patch.object(harness, "_WORKER_CONFIG", None):
            with pytest.raises(RuntimeError):
                harness.current_config()


class TestEvaluatePath:
    def test_fields(self, small_config):
        record = evaluate_path(small_config, 0)
        assert record.path_index == 0
        assert record.v2 > 0 and record.v3 > 0
        assert set(record.f3) == set(H_LIST)
        assert set(record.modulus_sup) == set(H_LIST)
        assert record.gamma_rep is None

    def test_antithetic_partner_mirrors(self, small_config):
        config = small_config.model_copy(update={"antithetic_pairs": True})
        even, odd = evaluate_path(config, 2), evaluate_path(config, 3)
        assert odd.v3 == pytest.approx(even.v3, rel=1e-12)
        for h in H_LIST:
            assert odd.f3[h] == pytest.approx(-even.f3[h], rel=1e-9, abs=1e-15)
            assert odd.f2[h] == pytest.approx(even.f2[h], rel=1e-12)

    def test_floating_point_failure_excludes(self, small_config):
        with patch("loctime.harness.evaluate_path", side_effect=FloatingPointError("overflow encountered")):
            record = evaluate_safely(small_config, 3)
        assert record.excluded
        assert record.path_index == 3
        assert record.reason.startswith("FloatingPointError")

    def test_non_positive_integral_excludes(self, small_config):
        bad = PathRecord(path_index=1, v2=1.0, v3=0.0)
        with patch("loctime.harness.evaluate_path", return_value=bad):
            record = evaluate_safely(small_config, 1)
        assert record.status == RecordStatus.EXCLUDED
        assert "DataError" in record.reason


class TestRunEnsemble:
    def test_records_in_path_order(self, small_config):
        records = run_ensemble(small_config, progress=False)
        assert [r.path_index for r in records] == list(range(6))

    def test_csv_independent_of_worker_count(self, small_config, tmp_path):
        serial = tmp_path / "serial.csv"
        pooled = tmp_path / "pooled.csv"
        run_ensemble(small_config.model_copy(update={"threads": 1}), serial, progress=False)
        run_ensemble(small_config.model_copy(update={"threads": 2}), pooled, progress=False)
        assert serial.read_bytes() == pooled.read_bytes()
        assert not (tmp_path / "serial.csv.partial").exists()

    def test_same_seed_same_bytes(self, small_config, tmp_path):
        config = small_config.model_copy(update={"threads": 1})
        run_ensemble(config, tmp_path / "a.csv", progress=False)
        run_ensemble(config, tmp_path / "b.csv", progress=False)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_excluded_paths_are_kept(self, small_config):
        config = small_config.model_copy(update={"threads": 1})
        with patch("loctime.harness.evaluate_path", side_effect=FloatingPointError("invalid value")):
            records = run_ensemble(config, progress=False)
        assert len(records) == 6
        assert all(r.excluded for r in records)
