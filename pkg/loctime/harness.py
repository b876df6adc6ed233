"""Ensemble runner and CLT reports.

Runs path ensembles in a process pool, forms the normalized statistics
for p = 2 and p = 3, and reduces records into per-bandwidth reports and
cross-bandwidth trends. Records are produced in path order whatever the
worker count; every aggregate is computed from sorted samples, so record
order never changes a report number.
"""

from __future__ import annotations

import logging
import math
import os
import sys
import time
from collections.abc import Callable, Iterable, Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml
from tqdm import tqdm

from loctime import artifacts, numerics
from loctime.errors import DataError, UsageError
from loctime.functionals import clark_ocone_sum, gamma_eps, gamma_rep, modulus_lp, self_lp
from loctime.local_time import binned_field, default_stride, modulus_sup, path_grid, prefix_fields
from loctime.models import (
    ExperimentConfig,
    PathRecord,
    RecordStatus,
    Report,
    ReportEntry,
    SeedSpec,
    TrendSummary,
)
from loctime.path_engine import ensemble_path, make_grid

logger = logging.getLogger(__name__)

_CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"
_ACCEPTANCE_PATH = _CONFIG_DIR / "acceptance.yml"

L3_CONSTANT = 8.0 * math.sqrt(3.0)
L2_CONSTANT = 8.0 / math.sqrt(3.0)


@lru_cache(maxsize=1)
def load_acceptance() -> dict:
    """Acceptance thresholds from config/acceptance.yml."""
    with open(_ACCEPTANCE_PATH, "r", encoding="utf-8") as f:
        return yaml.safe_load(f)


# -- Parallel map --

def _show_progress(progress: bool) -> bool:
    return progress and sys.stderr.isatty()


def worker_count(threads: Optional[int]) -> int:
    return threads or os.cpu_count() or 1


def parallel_map(
    func: Callable[[Any], Any],
    items: Sequence[Any],
    threads: Optional[int],
    desc: str,
    progress: bool = True,
    initializer: Optional[Callable[..., None]] = None,
    initargs: tuple = (),
) -> Iterator[Any]:
    """Ordered map of `func` over `items`, in a process pool when threads > 1.

    Results are yielded in item order, so consumers can stream them.
    """
    workers = min(worker_count(threads), max(1, len(items)))
    bar = tqdm(total=len(items), desc=desc, unit="path", disable=not _show_progress(progress))
    try:
        if workers == 1:
            if initializer is not None:
                initializer(*initargs)
            for item in items:
                yield func(item)
                bar.update(1)
            return
        chunksize = max(1, len(items) // (workers * 8))
        with ProcessPoolExecutor(
            max_workers=workers, initializer=initializer, initargs=initargs,
        ) as pool:
            for result in pool.map(func, items, chunksize=chunksize):
                yield result
                bar.update(1)
    finally:
        bar.close()


# -- Per-path evaluation --

_WORKER_CONFIG: Optional[ExperimentConfig] = None


def init_worker(config_data: dict) -> None:
    global _WORKER_CONFIG
    _WORKER_CONFIG = ExperimentConfig.model_validate(config_data)


def current_config() -> ExperimentConfig:
    """Config installed in this worker process by the pool initializer."""
    if _WORKER_CONFIG is None:
        raise RuntimeError("worker config not initialized")
    return _WORKER_CONFIG


def _require_finite(record: PathRecord) -> None:
    values = [record.v2, record.v3, *record.f2.values(), *record.f3.values()]
    values += list(record.modulus_sup.values()) + list(record.gamma_eps.values())
    values += [v for v in (record.gamma_rep, record.clark_ocone) if v is not None]
    if not all(math.isfinite(v) for v in values):
        raise DataError("non-finite functional value")
    if record.v2 <= 0 or record.v3 <= 0:
        raise DataError("non-positive self-intersection integral")


def _path_and_field(config: ExperimentConfig, path_index: int):
    grid_t = make_grid(config.t, config.n_steps)
    path = ensemble_path(SeedSpec(master_seed=config.master_seed), path_index, grid_t, config.antithetic_pairs)
    grid = path_grid(path, config.dx, h_max=config.h_list[0], symmetric=True)
    return path, grid, binned_field(path, grid)


def evaluate_path(config: ExperimentConfig, path_index: int) -> PathRecord:
    """Every per-path functional the config asks for."""
    path, grid, field = _path_and_field(config, path_index)

    record = PathRecord(
        path_index=path_index,
        v2=self_lp(field, 2),
        v3=self_lp(field, 3),
        f2={h: modulus_lp(field, h, 2).value for h in config.h_list},
        f3={h: modulus_lp(field, h, 3).value for h in config.h_list},
    )
    if not (config.compute_modulus_sup or config.compute_gamma or config.compute_clark_ocone):
        return record

    stream = prefix_fields(path, grid, default_stride(config.n_steps, config.emitted))
    update: dict[str, Any] = {}
    if config.compute_modulus_sup:
        update["modulus_sup"] = {h: modulus_sup(stream, h) for h in config.h_list}
    if config.compute_gamma:
        update["gamma_rep"] = gamma_rep(path, stream).value
        update["gamma_eps"] = {eps: gamma_eps(path, eps).value for eps in config.gamma_eps}
    if config.compute_clark_ocone:
        update["clark_ocone"] = clark_ocone_sum(path, stream, config.h_list[0], config.guard).total
    return record.model_copy(update=update)


def evaluate_safely(config: ExperimentConfig, path_index: int) -> PathRecord:
    """evaluate_path with numeric failures turned into an excluded record."""
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            record = evaluate_path(config, path_index)
        _require_finite(record)
        return record
    except (FloatingPointError, ArithmeticError, DataError) as exc:
        logger.warning("Path %d excluded: %s", path_index, exc)
        return PathRecord(
            path_index=path_index,
            status=RecordStatus.EXCLUDED,
            reason=f"{type(exc).__name__}: {exc}",
        )


def _evaluate_in_worker(path_index: int) -> PathRecord:
    return evaluate_safely(current_config(), path_index)


def run_ensemble(
    config: ExperimentConfig,
    records_path: Optional[Path] = None,
    progress: bool = True,
) -> list[PathRecord]:
    """Evaluate paths 0..n_paths-1, streaming records to CSV as produced.

    Args:
        config: Effective configuration.
        records_path: Destination of the records CSV, or None for no file.
        progress: Show a tqdm bar when stderr is a terminal.

    Returns:
        One record per path, in path order.
    """
    if config.under_resolved:
        logger.warning(
            "Under-resolved: time step %.3g exceeds dx^2 = %.3g", config.step, config.dx ** 2,
        )
    started = time.monotonic()
    indices = list(range(config.n_paths))
    results = parallel_map(
        _evaluate_in_worker, indices, config.threads, "paths", progress,
        initializer=init_worker, initargs=(config.model_dump(),),
    )

    records: list[PathRecord] = []
    if records_path is None:
        records.extend(results)
    else:
        with artifacts.RecordWriter(records_path, config) as writer:
            batch: list[PathRecord] = []
            for record in results:
                records.append(record)
                batch.append(record)
                if len(batch) >= 256:
                    writer.write(batch)
                    batch = []
            writer.write(batch)

    n_excluded = sum(r.excluded for r in records)
    logger.info(
        "Ensemble done: %d paths, %d excluded, %.1f s",
        len(records), n_excluded, time.monotonic() - started,
    )
    return records


def dump_paths(config: ExperimentConfig, count: int, out_dir: Path) -> list[Path]:
    """Write path_{i}.csv and field_{i}.csv for the first `count` paths.

    The field is the binned L_t on the run's grid.
    """
    written = []
    for i in range(min(count, config.n_paths)):
        path, _, field = _path_and_field(config, i)
        dest = out_dir / f"path_{i}.csv"
        artifacts.write_path_csv(path, dest)
        artifacts.write_field_csv(field, out_dir / f"field_{i}.csv")
        written.append(dest)
    logger.info("Dumped %d paths to %s", len(written), out_dir)
    return written


# -- Normalized statistics --

def normalize_l3(record: PathRecord, h: float, t: float) -> float:
    """h^{-2} F3(h) / (8 sqrt(3) sqrt(V3)).

    Raises:
        DataError: If V3 is not positive.
    """
    if not record.v3 > 0:
        raise DataError(f"path {record.path_index}: V3 must be positive, got {record.v3!r}")
    return record.f3[h] / (h * h) / (L3_CONSTANT * math.sqrt(record.v3))


def normalize_l2(record: PathRecord, h: float, t: float) -> float:
    """h^{-3/2} (F2(h) - 4th) / ((8/sqrt(3)) sqrt(V2)).

    Raises:
        DataError: If V2 is not positive.
    """
    if not record.v2 > 0:
        raise DataError(f"path {record.path_index}: V2 must be positive, got {record.v2!r}")
    return (record.f2[h] - 4.0 * t * h) / h ** 1.5 / (L2_CONSTANT * math.sqrt(record.v2))


def _sorted_mean(values: np.ndarray) -> float:
    return math.fsum(np.sort(values).tolist()) / values.size


def _ratio_with_se(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """mean(num)/mean(den) with its delta-method standard error."""
    n = num.size
    a, b = _sorted_mean(num), _sorted_mean(den)
    ratio = a / b
    var_a = _sorted_mean((num - a) ** 2)
    var_b = _sorted_mean((den - b) ** 2)
    cov = _sorted_mean((num - a) * (den - b))
    spread = var_a / b ** 2 - 2.0 * a * cov / b ** 3 + a * a * var_b / b ** 4
    return ratio, math.sqrt(max(spread, 0.0) / n)


def _p(p: int) -> int:
    if p not in (2, 3):
        raise UsageError(f"p must be 2 or 3, got {p!r}")
    return p


def clt_report(
    records: Iterable[PathRecord],
    h: float,
    p: int,
    t: float,
    thresholds: Optional[dict] = None,
    min_records: int = 1000,
) -> ReportEntry:
    """Distributional summary of W at one bandwidth.

    Raises:
        UsageError: If fewer than min_records valid records are given.
    """
    _p(p)
    records = list(records)
    valid = [r for r in records if not r.excluded]
    if len(valid) < min_records:
        raise UsageError(f"clt_report needs at least {min_records} valid records, got {len(valid)}")
    thr = thresholds if thresholds is not None else load_acceptance()["clt"]

    normalize = normalize_l3 if p == 3 else normalize_l2
    w = np.sort(np.array([normalize(r, h, t) for r in valid]))
    ks = numerics.ks_normal(w)
    moments = numerics.sample_moments(w)

    if p == 3:
        centered = np.array([r.f3[h] / (h * h) for r in valid])
        num = centered ** 2
        den = np.array([r.v3 for r in valid])
        target = L3_CONSTANT ** 2
        centering_target = 0.0
    else:
        centered = np.array([r.f2[h] / h for r in valid])
        num = np.array([((r.f2[h] - 4.0 * t * h) / h ** 1.5) ** 2 for r in valid])
        den = np.array([r.v2 for r in valid])
        target = L2_CONSTANT ** 2
        centering_target = 4.0 * t
    ratio, ratio_se = _ratio_with_se(num, den)
    centering_summary = numerics.sample_moments(centered)

    checks = {
        "mean": abs(moments.mean) <= thr["mean_abs"],
        "variance": abs(moments.variance - 1.0) <= thr["variance_abs"],
        "kurtosis": abs(moments.kurtosis - 3.0) <= thr["kurtosis_abs"],
        "ks_d": ks.statistic <= thr["ks_d"],
    }
    if p == 3:
        checks["second_moment_ratio"] = abs(ratio / target - 1.0) <= thr["ratio_rel"]
        checks["centering"] = (
            abs(centering_summary.mean) <= thr["centering_se"] * centering_summary.se_mean
        )
    else:
        checks["centering"] = (
            abs(centering_summary.mean / centering_target - 1.0) <= thr["centering_rel"]
        )

    sups = [r.modulus_sup[h] for r in valid if h in r.modulus_sup]
    return ReportEntry(
        h=h,
        p=p,
        n=len(valid),
        n_excluded=len(records) - len(valid),
        ks_d=ks.statistic,
        ks_p=ks.p_value,
        mean=moments.mean,
        var=moments.variance,
        skew=moments.skewness,
        kurt=moments.kurtosis,
        se_mean=moments.se_mean,
        se_var=moments.se_variance,
        se_skew=moments.se_skewness,
        se_kurt=moments.se_kurtosis,
        second_moment_ratio=ratio,
        second_moment_ratio_se=ratio_se,
        second_moment_target=target,
        centering_mean=centering_summary.mean,
        centering_se=centering_summary.se_mean,
        centering_target=centering_target,
        modulus_sup_mean=_sorted_mean(np.array(sups)) if len(sups) == len(valid) else None,
        checks=checks,
    )


def trends(entries: Sequence[ReportEntry], slope_range: tuple[float, float]) -> TrendSummary:
    """Cross-bandwidth diagnostics, entries ordered by decreasing h.

    KS D may rise by at most 2 SE between consecutive bandwidths, with the
    null SE of D taken as 0.5/sqrt(n); the ratio distance to its target may
    grow by at most 2 ratio SEs.
    """
    ks_d = [e.ks_d for e in entries]
    ks_ok = all(
        later.ks_d <= earlier.ks_d + 2.0 * 0.5 / math.sqrt(later.n)
        for earlier, later in zip(entries, entries[1:])
    )
    ratios = [e.second_moment_ratio for e in entries]
    ratio_ok = all(
        abs(later.second_moment_ratio - later.second_moment_target)
        <= abs(earlier.second_moment_ratio - earlier.second_moment_target)
        + 2.0 * later.second_moment_ratio_se
        for earlier, later in zip(entries, entries[1:])
    )
    summary = TrendSummary(
        ks_d=ks_d, ks_d_non_increasing=ks_ok, second_moment_ratio=ratios, ratio_toward_target=ratio_ok,
    )
    sups = [(e.h, e.modulus_sup_mean) for e in entries]
    if all(m is not None and m > 0 for _, m in sups):
        slope = numerics.loglog_slope(sups)
        lo, hi = slope_range
        summary = summary.model_copy(
            update={"modulus_sup_slope": slope, "modulus_sup_slope_ok": lo <= slope <= hi},
        )
    return summary


def sweep(
    config: ExperimentConfig,
    p: int,
    records: Optional[list[PathRecord]] = None,
    acceptance: Optional[dict] = None,
) -> Report:
    """Reports at every h in the config plus trend diagnostics.

    Raises:
        UsageError: If the config lists fewer than three bandwidths.
    """
    _p(p)
    if len(config.h_list) < 3:
        raise UsageError(f"sweep needs at least 3 bandwidths, got {len(config.h_list)}")
    acceptance = acceptance if acceptance is not None else load_acceptance()
    if records is None:
        records = run_ensemble(config)

    logger.info("=== Reporting p=%d over %d bandwidths ===", p, len(config.h_list))
    entries = [
        clt_report(records, h, p, config.t, acceptance["clt"], config.min_records)
        for h in config.h_list
    ]
    slope_range = tuple(acceptance["scaling"]["modulus_sup_slope"])
    trend = trends(entries, slope_range)

    valid = [r for r in records if not r.excluded]
    v = np.array([r.v3 if p == 3 else r.v2 for r in valid])
    v_summary = numerics.sample_moments(v)
    oracle = numerics.self_lp_mean_oracle(p, config.t)
    n_excluded = len(records) - len(valid)

    checks = {
        "ks_trend": trend.ks_d_non_increasing,
        "self_lp_mean": abs(v_summary.mean / oracle - 1.0) <= acceptance["clt"]["oracle_rel"],
        "excluded_fraction": n_excluded <= acceptance["clt"]["excluded_fraction"] * len(records),
    }
    if p == 3:
        checks["ratio_trend"] = trend.ratio_toward_target
    if trend.modulus_sup_slope_ok is not None:
        checks["modulus_sup_slope"] = trend.modulus_sup_slope_ok

    report = Report(
        p=p,
        config=config.audit_dict(),
        n_records=len(records),
        n_excluded=n_excluded,
        under_resolved=config.under_resolved,
        entries={repr(e.h): e for e in entries},
        trends=trend,
        self_lp_mean=v_summary.mean,
        self_lp_se=v_summary.se_mean,
        self_lp_oracle=oracle,
        checks=checks,
    )
    for name, ok in checks.items():
        if not ok:
            logger.warning("Check failed: %s", name)
    return report
