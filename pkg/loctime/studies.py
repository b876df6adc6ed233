"""Refinement and scaling studies behind the representation, scaling and gamma commands.

Each study evaluates every path in the worker pool, writes its CSV
artifacts and returns a StudyReport whose checks decide the exit code.
"""

from __future__ import annotations

import logging
import math
import statistics
from pathlib import Path
from typing import Any, Optional

import numpy as np

from loctime import artifacts, harness, numerics
from loctime.errors import DataError, UsageError
from loctime.functionals import (
    cancellation_gap,
    clark_ocone_sum,
    gamma_eps,
    gamma_rep,
    mean_tanaka_residual,
    modulus_lp,
)
from loctime.local_time import (
    binned_field,
    default_stride,
    hat_time_integral,
    increment_sup,
    modulus_sup,
    path_grid,
    prefix_fields,
)
from loctime.models import ExperimentConfig, RefinementTrend, SeedSpec, StudyReport
from loctime.path_engine import ensemble_path, make_grid, refine

logger = logging.getLogger(__name__)


def _base_path(config: ExperimentConfig, path_index: int):
    grid_t = make_grid(config.t, config.n_steps)
    return ensemble_path(SeedSpec(master_seed=config.master_seed), path_index, grid_t, config.antithetic_pairs)


def _guarded(func, path_index: int) -> dict[str, Any]:
    """Run a per-path study function, turning numeric failures into an exclusion."""
    config = harness.current_config()
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            result = func(config, path_index)
        result["excluded"] = None
        return result
    except (FloatingPointError, ArithmeticError, DataError) as exc:
        logger.warning("Path %d excluded: %s", path_index, exc)
        return {"path_index": path_index, "excluded": f"{type(exc).__name__}: {exc}"}


def _collect(config: ExperimentConfig, worker, desc: str, progress: bool) -> tuple[list[dict], int]:
    results = list(harness.parallel_map(
        worker, list(range(config.n_paths)), config.threads, desc, progress,
        initializer=harness.init_worker, initargs=(config.model_dump(),),
    ))
    valid = [r for r in results if r["excluded"] is None]
    n_excluded = len(results) - len(valid)
    if n_excluded:
        logger.warning("%d of %d paths excluded", n_excluded, len(results))
    if not valid:
        raise DataError("every path was excluded")
    return valid, n_excluded


def _rms(values: list[float]) -> float:
    return math.sqrt(math.fsum(sorted(v * v for v in values)) / len(values))


def _eps_order(config: ExperimentConfig) -> list[int]:
    """Positions of gamma_eps from largest to smallest eps."""
    return sorted(range(len(config.gamma_eps)), key=lambda j: -config.gamma_eps[j])


def _strictly_decreasing(values: list[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


# -- Representation --

TANAKA_OFFSETS = (-0.75, -0.25, 0.0, 0.25, 0.75)
TANAKA_TIMES = 16


def tanaka_times(config: ExperimentConfig) -> list[float]:
    """Base-grid times j t / TANAKA_TIMES, j = 1..TANAKA_TIMES, ending at t."""
    step = config.t / config.n_steps
    indices = sorted({round(j * config.n_steps / TANAKA_TIMES) for j in range(1, TANAKA_TIMES + 1)} - {0})
    return [i * step for i in indices]


def representation_path(config: ExperimentConfig, path_index: int) -> dict[str, Any]:
    """Clark-Ocone and reversed-Tanaka residuals at every refinement level.

    Level k refines the path by 2^k with dx = h / (bin_ratio 2^k). The
    stride is held at the base stride in refined steps, so each round
    doubles both the time resolution and the number of integrand
    evaluations, and the endpoint guard halves. The Tanaka residual is
    averaged over offsets x = c h, c in TANAKA_OFFSETS, and the times of
    tanaka_times, the same at every level.
    """
    h = config.h_list[0]
    base = _base_path(config, path_index)
    stride = default_stride(config.n_steps, config.emitted)
    offsets = [c * h for c in TANAKA_OFFSETS]
    times = tanaka_times(config)

    levels = []
    for k in range(config.rounds + 1):
        path = base if k == 0 else refine(base, 2 ** k)
        grid = path_grid(path, h / (config.bin_ratio * 2 ** k), h_max=h, symmetric=True)
        f3 = modulus_lp(binned_field(path, grid), h, 3).value
        stream = prefix_fields(path, grid, stride)
        co = clark_ocone_sum(path, stream, h, config.guard / 2 ** k)
        levels.append({
            "f3": f3,
            "clark_ocone": co.total,
            "clark_ocone_rel": abs(co.total - f3) / (abs(f3) + h * h),
            "n_evaluations": co.n_evaluations,
            "tanaka": mean_tanaka_residual(path, grid, offsets, h, times),
            "sliver_bound": co.sliver_bound,
        })
        if k == 0:
            base_co, base_stream = co, stream

    rep = gamma_rep(base, base_stream).value
    return {
        "path_index": path_index,
        "levels": levels,
        "gamma_rep": rep,
        "gamma_eps": [gamma_eps(base, eps).value for eps in config.gamma_eps],
        "cancellation_gap": cancellation_gap(base_co, rep, h),
        "phi34": (base_co.terms[2] + base_co.terms[3]) / (h * h),
    }


def _representation_worker(path_index: int) -> dict[str, Any]:
    return _guarded(representation_path, path_index)


def _residual_rows(results: list[dict], quantity: str, key: str) -> list[dict]:
    rows = []
    for r in results:
        for k in range(1, len(r["levels"])):
            coarse = r["levels"][k - 1][key]
            fine = r["levels"][k][key]
            rows.append({
                "path_index": r["path_index"],
                "quantity": f"{quantity}@round{k}",
                "coarse_value": coarse,
                "fine_value": fine,
                "residual": fine - coarse,
            })
    return rows


def _level_trend(results: list[dict], quantity: str, key: str) -> RefinementTrend:
    """Medians per level; decreasing iff every round's median paired ratio is below one."""
    levels = len(results[0]["levels"])
    medians = [statistics.median(r["levels"][k][key] for r in results) for k in range(levels)]
    ratios = []
    for k in range(1, levels):
        paired = [
            r["levels"][k][key] / r["levels"][k - 1][key]
            for r in results if r["levels"][k - 1][key] > 0
        ]
        ratios.append(statistics.median(paired) if paired else math.inf)
    return RefinementTrend(
        quantity=quantity,
        medians=medians,
        round_ratios=ratios,
        decreasing=all(q < 1.0 for q in ratios),
    )


def run_representation(config: ExperimentConfig, out_dir: Path, progress: bool = True) -> StudyReport:
    """Clark-Ocone, reversed-Tanaka and gamma cross-validation study.

    Passes iff, in every refinement round, the median over paths of the
    fine / coarse ratio is below one for both the Clark-Ocone and the
    averaged reversed-Tanaka residuals, and the gamma RMS gap falls as eps
    shrinks.
    """
    logger.info("=== Representation study: %d paths, %d rounds ===", config.n_paths, config.rounds)
    results, n_excluded = _collect(config, _representation_worker, "representation", progress)

    co_trend = _level_trend(results, "clark_ocone", "clark_ocone_rel")
    tanaka_trend = _level_trend(results, "reversed_tanaka", "tanaka")
    for trend in (co_trend, tanaka_trend):
        logger.info("%s: medians %s, paired ratios %s", trend.quantity, trend.medians, trend.round_ratios)
    gamma_rms = [
        _rms([r["gamma_eps"][j] - r["gamma_rep"] for r in results])
        for j in _eps_order(config)
    ]
    gaps = [r["cancellation_gap"] for r in results]
    phi34 = np.array([r["phi34"] for r in results])
    twelve_gamma = 12.0 * np.array([r["gamma_rep"] for r in results])
    correlation = (
        float(np.corrcoef(phi34, twelve_gamma)[0, 1]) if len(results) > 2 and phi34.std() > 0 else None
    )

    rows = _residual_rows(results, "clark_ocone", "clark_ocone_rel")
    rows += _residual_rows(results, "reversed_tanaka", "tanaka")
    artifacts.write_table(
        rows,
        ["path_index", "quantity", "coarse_value", "fine_value", "residual"],
        out_dir / "representation_residuals.csv",
        config.audit_dict(),
    )

    report = StudyReport(
        study="representation",
        config=config.audit_dict(),
        n_paths=config.n_paths,
        n_excluded=n_excluded,
        values={
            "cancellation_gap_rms": _rms(gaps),
            "cancellation_correlation": correlation,
            "sliver_bound_max": max(lv["sliver_bound"] for r in results for lv in r["levels"]),
        },
        series={
            "gamma_eps": [config.gamma_eps[j] for j in _eps_order(config)],
            "gamma_rms": gamma_rms,
        },
        trends=[co_trend, tanaka_trend],
        checks={
            "clark_ocone_refinement": co_trend.decreasing,
            "reversed_tanaka_refinement": tanaka_trend.decreasing,
            "gamma_rms_decreasing": _strictly_decreasing(gamma_rms),
        },
    )
    artifacts.write_json(report.model_dump(), out_dir / "representation_report.json")
    return report


# -- Scaling --

def _increment_positions(n_emitted: int, fractions: list[float]) -> list[int]:
    positions = []
    for q in fractions:
        back = round(q * n_emitted)
        if back < 1 or back >= n_emitted:
            raise UsageError(f"fraction {q} does not resolve on {n_emitted} emitted fields")
        positions.append(n_emitted - 1 - back)
    return positions


def scaling_path(config: ExperimentConfig, path_index: int) -> dict[str, Any]:
    """Modulus sup per h, occupation increments per fraction and the occupation bound ratio."""
    path = _base_path(config, path_index)
    h_top = config.h_list[0]
    grid = path_grid(path, config.dx, h_max=h_top, symmetric=True)
    stream = prefix_fields(path, grid, default_stride(config.n_steps, config.emitted))
    final = stream.field(len(stream) - 1)
    values = np.asarray(path.values)

    increments, gaps, ratios = [], [], []
    for pos in _increment_positions(len(stream), config.increment_fractions):
        earlier = stream.field(pos)
        s_idx = int(stream.indices[pos])
        sup = increment_sup(final, earlier)
        increments.append(sup)
        gaps.append(config.t - earlier.time)
        if sup > 0:
            occupied = hat_time_integral(path, float(values[s_idx]), h_top, start=s_idx)
            ratios.append(occupied / (h_top * h_top * sup))

    return {
        "path_index": path_index,
        "modulus_sup": [modulus_sup(stream, h) for h in config.h_list],
        "increment_sup": increments,
        "gaps": gaps,
        "bound_ratio": max(ratios) if ratios else 0.0,
    }


def _scaling_worker(path_index: int) -> dict[str, Any]:
    return _guarded(scaling_path, path_index)


def _mean_se(values: list[float]) -> tuple[float, float]:
    summary = numerics.sample_moments(values)
    return summary.mean, summary.se_mean


def run_scaling(
    config: ExperimentConfig,
    out_dir: Path,
    acceptance: Optional[dict] = None,
    progress: bool = True,
) -> StudyReport:
    """Log-log slopes of the modulus sup in h and of occupation increments in t - s."""
    acceptance = acceptance if acceptance is not None else harness.load_acceptance()
    scaling = acceptance["scaling"]
    if len(config.h_list) < 2:
        raise UsageError("scaling needs at least two bandwidths")
    if config.n_paths < 2:
        raise UsageError("scaling needs at least two paths")
    logger.info("=== Scaling study: %d paths ===", config.n_paths)
    results, n_excluded = _collect(config, _scaling_worker, "scaling", progress)

    rows = []
    sup_means = []
    for i, h in enumerate(config.h_list):
        mean, se = _mean_se([r["modulus_sup"][i] for r in results])
        sup_means.append(mean)
        rows.append({"kind": "modulus_sup", "x": h, "mean": mean, "se": se})
    gap_axis = results[0]["gaps"]
    inc_means = []
    for j, gap in enumerate(gap_axis):
        mean, se = _mean_se([r["increment_sup"][j] for r in results])
        inc_means.append(mean)
        rows.append({"kind": "increment_sup", "x": gap, "mean": mean, "se": se})
    artifacts.write_table(rows, ["kind", "x", "mean", "se"], out_dir / "scaling.csv", config.audit_dict())

    sup_slope = numerics.loglog_slope(list(zip(config.h_list, sup_means)))
    inc_slope = numerics.loglog_slope(list(zip(gap_axis, inc_means)))
    worst_ratio = max(r["bound_ratio"] for r in results)
    allowed_ratio = 1.0 + scaling["occupation_bound_slack"] * config.dx / config.h_list[0]

    lo, hi = scaling["modulus_sup_slope"]
    ilo, ihi = scaling["increment_slope"]
    report = StudyReport(
        study="scaling",
        config=config.audit_dict(),
        n_paths=config.n_paths,
        n_excluded=n_excluded,
        values={
            "modulus_sup_slope": sup_slope,
            "increment_slope": inc_slope,
            "occupation_bound_ratio": worst_ratio,
            "occupation_bound_allowed": allowed_ratio,
        },
        series={"modulus_sup_mean": sup_means, "increment_sup_mean": inc_means},
        checks={
            "modulus_sup_slope": lo <= sup_slope <= hi,
            "increment_slope": ilo <= inc_slope <= ihi,
            "occupation_bound": worst_ratio <= allowed_ratio,
        },
    )
    artifacts.write_json(report.model_dump(), out_dir / "scaling_report.json")
    return report


# -- Gamma --

def gamma_path(config: ExperimentConfig, path_index: int) -> dict[str, Any]:
    """Both gamma representations, plus the smallest-eps gap after one refinement."""
    base = _base_path(config, path_index)
    h_top = config.h_list[0]
    stride = default_stride(config.n_steps, config.emitted)
    eps_min = min(config.gamma_eps)

    out: dict[str, Any] = {"path_index": path_index}
    for k, path in enumerate((base, refine(base, 2))):
        grid = path_grid(path, config.dx / 2 ** k, h_max=h_top, symmetric=True)
        stream = prefix_fields(path, grid, stride * 2 ** k)
        rep = gamma_rep(path, stream).value
        if k == 0:
            out["gamma_rep"] = rep
            out["gamma_eps"] = [gamma_eps(path, eps).value for eps in config.gamma_eps]
            out["coarse_gap"] = out["gamma_eps"][config.gamma_eps.index(eps_min)] - rep
        else:
            out["fine_gap"] = gamma_eps(path, eps_min).value - rep
    return out


def _gamma_worker(path_index: int) -> dict[str, Any]:
    return _guarded(gamma_path, path_index)


def run_gamma(config: ExperimentConfig, out_dir: Path, progress: bool = True) -> StudyReport:
    """Per-path gamma pairs; passes iff the RMS gap falls as eps shrinks."""
    if len(config.gamma_eps) < 2:
        raise UsageError("gamma study needs at least two eps values")
    if config.n_paths < 2:
        raise UsageError("gamma study needs at least two paths")
    logger.info("=== Gamma study: %d paths, eps %s ===", config.n_paths, config.gamma_eps)
    results, n_excluded = _collect(config, _gamma_worker, "gamma", progress)

    columns = ["path_index", "gamma_rep"] + [f"gamma_eps_e{j}" for j in range(len(config.gamma_eps))]
    rows = []
    for r in results:
        row = {"path_index": r["path_index"], "gamma_rep": r["gamma_rep"]}
        row.update({f"gamma_eps_e{j}": v for j, v in enumerate(r["gamma_eps"])})
        rows.append(row)
    artifacts.write_table(rows, columns, out_dir / "gamma.csv", config.audit_dict())

    order = _eps_order(config)
    rms = [_rms([r["gamma_eps"][j] - r["gamma_rep"] for r in results]) for j in order]
    rep_mean, rep_se = _mean_se([r["gamma_rep"] for r in results])

    report = StudyReport(
        study="gamma",
        config=config.audit_dict(),
        n_paths=config.n_paths,
        n_excluded=n_excluded,
        values={
            "gamma_rep_mean": rep_mean,
            "gamma_rep_se": rep_se,
            "coarse_gap_rms": _rms([r["coarse_gap"] for r in results]),
            "fine_gap_rms": _rms([r["fine_gap"] for r in results]),
        },
        series={"gamma_eps": [config.gamma_eps[j] for j in order], "gamma_rms": rms},
        checks={"gamma_rms_decreasing": _strictly_decreasing(rms)},
    )
    artifacts.write_json(report.model_dump(), out_dir / "gamma_report.json")
    return report
