"""Deterministic file emission: CSV tables and flat key-value summaries.

All numeric output uses 17 significant decimal digits, which round-trips
64-bit floats exactly.  Files are written to a temporary sibling and
atomically renamed, so a failed run never leaves partial output behind.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .dde import NodeGrid
from .modulation import FEEDFORWARD, DelaySet, ModulationProfile
from .verify import EquivalenceReport, SuiteReport, SweepReport, TopologyReport

FLOAT_FORMAT = "%.17g"


def fmt(value) -> str:
    """Render one value for CSV / summary output."""
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % float(value)
    return str(value)


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_rows(path: Path, header: list[str], rows) -> None:
    """CSV with one header row; every cell goes through :func:`fmt`."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(cell) for cell in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_summary(path: Path, items: dict) -> None:
    """Flat ``key = value`` lines, one metric per line, diff-friendly."""
    lines = [f"{key} = {fmt(value)}" for key, value in items.items()]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_node_grid(path: Path, node_grid: NodeGrid) -> None:
    write_rows(path, ["segment", "node", "time", "value"], node_grid.rows())


def write_output_vector(path: Path, values: np.ndarray) -> None:
    rows = [(i + 1, v) for i, v in enumerate(np.asarray(values, dtype=float))]
    write_rows(path, ["index", "value"], rows)


def write_matrix(path: Path, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    lines = [",".join(FLOAT_FORMAT % v for v in row) for row in matrix]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_matrix(path: Path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except ValueError as err:
        raise ValueError(f"{path}: not a numeric CSV matrix ({err})") from err


def write_profile(path: Path, profile: ModulationProfile, delays: DelaySet) -> None:
    """Step-height table, one row per (segment, delay, node) entry.

    Feed-forward profiles list segments 2..L; recurrent profiles drop the
    segment column.  The delay column holds the delay in grid units, not
    its position in the set.
    """
    if profile.mode == FEEDFORWARD:
        rows = []
        for segment in range(2, profile.values.shape[0] + 2):
            for d, n_d in enumerate(delays):
                for n in range(1, profile.nodes_per_layer + 1):
                    rows.append((segment, n_d, n, profile.values[segment - 2, d, n - 1]))
        write_rows(path, ["segment", "delay", "node", "value"], rows)
    else:
        rows = [
            (n_d, n, profile.values[d, n - 1])
            for d, n_d in enumerate(delays)
            for n in range(1, profile.nodes_per_layer + 1)
        ]
        write_rows(path, ["delay", "node", "value"], rows)


def read_csv_rows(path: Path, expected_header: list[str]) -> list[list[str]]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        if [h.strip() for h in header] != expected_header:
            raise ValueError(
                f"{path}: expected header {','.join(expected_header)}, got {','.join(header)}"
            )
        return [row for row in reader if row]


def read_profile(path: Path, delays: DelaySet, nodes_per_layer: int,
                 segment_count: int, mode: str) -> np.ndarray:
    """Parse a profile CSV back into the dense (segments-1, D, N) or (D, N) table."""
    N, D = nodes_per_layer, delays.count
    if mode == FEEDFORWARD:
        table = np.zeros((segment_count - 1, D, N))
        for row in read_csv_rows(path, ["segment", "delay", "node", "value"]):
            segment, n_d, n = int(row[0]), int(row[1]), int(row[2])
            d = delays.position(n_d)
            if d is None:
                raise ValueError(f"{path}: delay {n_d} not in the configured delay set")
            if not 2 <= segment <= segment_count:
                raise ValueError(f"{path}: segment {segment} outside [2, {segment_count}]")
            if not 1 <= n <= N:
                raise ValueError(f"{path}: node {n} outside [1, {N}]")
            table[segment - 2, d, n - 1] = float(row[3])
        return table
    table = np.zeros((D, N))
    for row in read_csv_rows(path, ["delay", "node", "value"]):
        n_d, n = int(row[0]), int(row[1])
        d = delays.position(n_d)
        if d is None:
            raise ValueError(f"{path}: delay {n_d} not in the configured delay set")
        if not 1 <= n <= N:
            raise ValueError(f"{path}: node {n} outside [1, {N}]")
        table[d, n - 1] = float(row[2])
    return table


def read_first_segment(path: Path, delays: DelaySet, nodes_per_layer: int) -> np.ndarray:
    table = np.zeros((delays.count, nodes_per_layer))
    for row in read_csv_rows(path, ["delay", "node", "value"]):
        n_d, n = int(row[0]), int(row[1])
        d = delays.position(n_d)
        if d is None:
            raise ValueError(f"{path}: delay {n_d} not in the configured delay set")
        table[d, n - 1] = float(row[2])
    return table


def read_history_table(path: Path) -> np.ndarray:
    """History CSV rows ``offset,value`` with contiguous offsets -1..-K."""
    entries = {}
    for row in read_csv_rows(path, ["offset", "value"]):
        offset = int(row[0])
        if offset >= 0:
            raise ValueError(f"{path}: history offsets must be negative, got {offset}")
        entries[offset] = float(row[1])
    if not entries:
        return np.zeros(0)
    depth = -min(entries)
    if sorted(entries) != list(range(-depth, 0)):
        raise ValueError(f"{path}: history offsets must cover -1..-{depth} without gaps")
    return np.array([entries[-(i + 1)] for i in range(depth)])


def equivalence_rows(reports: list[EquivalenceReport]):
    for i, r in enumerate(reports):
        yield (
            i + 1,
            r.seed if r.seed is not None else "",
            r.max_abs_error,
            r.max_rel_error,
            r.location.segment if r.location else "",
            r.location.node if r.location else "",
            r.passed,
        )


def write_suite_report(path: Path, suite: SuiteReport) -> None:
    write_rows(
        path,
        ["case", "seed", "max_abs_error", "max_rel_error",
         "argmax_segment", "argmax_node", "passed"],
        equivalence_rows(suite.reports),
    )


def write_sweep_report(path: Path, report: SweepReport) -> None:
    rows = []
    for p in report.points:
        if p.exact or report.slope is None:
            fitted = ""
        else:
            x = np.log(p.value) if report.log_abscissa else p.value
            fitted = float(np.exp(report.slope * x + report.intercept))
        rows.append((p.value, p.error, p.exact, fitted))
    write_rows(path, [report.parameter, "error", "exact", "fitted_error"], rows)


def write_topology_report(path: Path, report: TopologyReport) -> None:
    rows = [
        (e.nodes_per_layer, e.delay_units, e.direction, e.predicted_count,
         e.actual_count, e.offsets_ok, e.passed)
        for e in report.entries
    ]
    write_rows(
        path,
        ["nodes_per_layer", "delay", "direction", "predicted_count",
         "actual_count", "offsets_ok", "passed"],
        rows,
    )
