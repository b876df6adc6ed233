"""Artifact storage for loctime runs.

Provides writers for every output file: streamed per-path records,
report JSON, plot-ready and residual CSVs, and debugging dumps of paths
and fields. Every file embeds the effective configuration; CSVs carry
it as a leading "# config: {...}" comment line. Floats are written with
17 significant digits.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Iterable, Optional

import pandas as pd

from loctime.models import (
    BrownianPath,
    ExperimentConfig,
    LocalTimeField,
    PathRecord,
    RecordStatus,
    Report,
)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
PARTIAL_SUFFIX = ".partial"


def config_comment(config: ExperimentConfig | dict) -> str:
    """Leading comment line echoing the result-determining config."""
    data = config.audit_dict() if isinstance(config, ExperimentConfig) else config
    return "# config: " + json.dumps(data, sort_keys=True) + "\n"


def _write_frame(frame: pd.DataFrame, dest: Path, config: ExperimentConfig | dict | None) -> None:
    dest.parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "w", encoding="utf-8", newline="") as f:
        if config is not None:
            f.write(config_comment(config))
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


# -- Records --

def record_columns(config: ExperimentConfig) -> list[str]:
    """Records CSV header for a config."""
    columns = ["path_index", "V2", "V3"]
    for i, _ in enumerate(config.h_list):
        columns += [f"F2_h{i}", f"F3_h{i}"]
    if config.compute_modulus_sup:
        columns += [f"M_h{i}" for i, _ in enumerate(config.h_list)]
    if config.compute_gamma:
        columns.append("gamma_rep")
        columns += [f"gamma_eps_e{j}" for j, _ in enumerate(config.gamma_eps)]
    if config.compute_clark_ocone:
        columns.append("clark_ocone_h0")
    columns += ["status", "reason"]
    return columns


def record_row(record: PathRecord, config: ExperimentConfig) -> dict:
    """Flatten a PathRecord into a records CSV row."""
    nan = float("nan")
    row = {"path_index": record.path_index, "V2": record.v2, "V3": record.v3}
    for i, h in enumerate(config.h_list):
        row[f"F2_h{i}"] = record.f2.get(h, nan)
        row[f"F3_h{i}"] = record.f3.get(h, nan)
    if config.compute_modulus_sup:
        for i, h in enumerate(config.h_list):
            row[f"M_h{i}"] = record.modulus_sup.get(h, nan)
    if config.compute_gamma:
        row["gamma_rep"] = nan if record.gamma_rep is None else record.gamma_rep
        for j, eps in enumerate(config.gamma_eps):
            row[f"gamma_eps_e{j}"] = record.gamma_eps.get(eps, nan)
    if config.compute_clark_ocone:
        row["clark_ocone_h0"] = nan if record.clark_ocone is None else record.clark_ocone
    row["status"] = record.status.value
    row["reason"] = record.reason or ""
    return row


class RecordWriter:
    """Streams records to `<dest>.partial`, renamed to `dest` on clean exit.

    If the run aborts, the `.partial` file stays behind as the marker.
    """

    def __init__(self, dest: Path, config: ExperimentConfig):
        self.dest = Path(dest)
        self.partial = self.dest.with_name(self.dest.name + PARTIAL_SUFFIX)
        self.config = config
        self.columns = record_columns(config)
        self.count = 0

    def __enter__(self) -> "RecordWriter":
        _write_frame(pd.DataFrame(columns=self.columns), self.partial, self.config)
        return self

    def write(self, records: Iterable[PathRecord]) -> None:
        rows = [record_row(r, self.config) for r in records]
        if not rows:
            return
        frame = pd.DataFrame(rows, columns=self.columns)
        with open(self.partial, "a", encoding="utf-8", newline="") as f:
            frame.to_csv(
                f, header=False, index=False, float_format=FLOAT_FORMAT, lineterminator="\n",
            )
        self.count += len(rows)

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is None:
            os.replace(self.partial, self.dest)
            logger.info("Wrote %d records to %s", self.count, self.dest)
        else:
            logger.error("Run aborted after %d records; partial output left at %s", self.count, self.partial)
        return False


def read_records(path: Path, config: ExperimentConfig) -> list[PathRecord]:
    """Load a records CSV written for `config` back into PathRecords."""
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    records = []
    for row in frame.to_dict(orient="records"):
        status = RecordStatus(row["status"])
        reason = row.get("reason")
        records.append(PathRecord(
            path_index=int(row["path_index"]),
            v2=float(row["V2"]),
            v3=float(row["V3"]),
            f2={h: float(row[f"F2_h{i}"]) for i, h in enumerate(config.h_list)},
            f3={h: float(row[f"F3_h{i}"]) for i, h in enumerate(config.h_list)},
            modulus_sup=(
                {h: float(row[f"M_h{i}"]) for i, h in enumerate(config.h_list)}
                if config.compute_modulus_sup else {}
            ),
            gamma_rep=float(row["gamma_rep"]) if config.compute_gamma else None,
            gamma_eps=(
                {e: float(row[f"gamma_eps_e{j}"]) for j, e in enumerate(config.gamma_eps)}
                if config.compute_gamma else {}
            ),
            clark_ocone=float(row["clark_ocone_h0"]) if config.compute_clark_ocone else None,
            status=status,
            reason=reason if isinstance(reason, str) and reason else None,
        ))
    return records


# -- Reports --

def write_report_json(report: Report, dest: Path) -> None:
    """Report JSON, nested by h, with trends and the echoed config."""
    dest.parent.mkdir(parents=True, exist_ok=True)
    payload = json.loads(report.model_dump_json())
    payload["passed"] = report.passed
    dest.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote report to %s", dest)


def write_plot_csv(report: Report, dest: Path) -> None:
    """Plot-ready (h, ks_d, var, second_moment_ratio), one row per bandwidth."""
    rows = [
        {"h": e.h, "ks_d": e.ks_d, "var": e.var, "second_moment_ratio": e.second_moment_ratio}
        for e in sorted(report.entries.values(), key=lambda e: -e.h)
    ]
    frame = pd.DataFrame(rows, columns=["h", "ks_d", "var", "second_moment_ratio"])
    _write_frame(frame, dest, report.config)


def write_table(rows: list[dict], columns: list[str], dest: Path, config: Optional[dict]) -> None:
    """Generic CSV artifact (residual dumps, gamma pairs, scaling tables)."""
    _write_frame(pd.DataFrame(rows, columns=columns), dest, config)
    logger.info("Wrote %d rows to %s", len(rows), dest)


def write_json(payload: dict, dest: Path) -> None:
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- Debugging dumps --

def write_path_csv(path: BrownianPath, dest: Path) -> None:
    """Path dump with columns (index, time, value)."""
    frame = pd.DataFrame({
        "index": range(path.n_steps + 1),
        "time": path.grid.times(),
        "value": path.values,
    })
    _write_frame(frame, dest, None)


def write_field_csv(field: LocalTimeField, dest: Path) -> None:
    """Field dump with columns (bin_left_edge, value)."""
    frame = pd.DataFrame({"bin_left_edge": field.grid.left_edges(), "value": field.values})
    _write_frame(frame, dest, None)
