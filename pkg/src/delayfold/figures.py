"""Figure rendering for the verification reports.

Figures are written next to the delimited output by the CLI.  Rendering
uses the Agg backend and fixed PNG metadata so repeated runs of the same
configuration produce byte-identical files; matplotlib is imported
lazily to keep the simulation paths free of it.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .verify import SuiteReport, SweepReport, TopologyReport

PNG_METADATA = {"Software": "delayfold"}
DPI = 120


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="png", dpi=DPI, metadata=PNG_METADATA)
    _pyplot().close(fig)
    os.replace(tmp, path)


def suite_figure(suite: SuiteReport, path: Path, title: str) -> None:
    """Per-case worst relative error against the tolerance line."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    cases = np.arange(1, len(suite.reports) + 1)
    errors = np.array([max(r.max_rel_error, 1e-18) for r in suite.reports])
    colors = ["tab:blue" if r.passed else "tab:red" for r in suite.reports]
    ax.scatter(cases, errors, c=colors, s=18, zorder=3)
    ax.axhline(suite.tolerance, color="tab:gray", linestyle="--", linewidth=1,
               label=f"tolerance {suite.tolerance:g}")
    ax.set_yscale("log")
    ax.set_xlabel("case")
    ax.set_ylabel("max relative error")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def sweep_figure(report: SweepReport, path: Path, title: str, xlabel: str) -> None:
    """Sweep errors with the fitted exponential / power law overlaid."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    live = [(p.value, p.error) for p in report.points if not p.exact]
    exact = [p.value for p in report.points if p.exact]
    if live:
        xs = np.array([v for v, _ in live])
        ys = np.array([e for _, e in live])
        ax.plot(xs, ys, "o", color="tab:blue", label="measured")
        if report.slope is not None:
            dense = np.linspace(xs.min(), xs.max(), 64)
            arg = np.log(dense) if report.log_abscissa else dense
            ax.plot(dense, np.exp(report.slope * arg + report.intercept), "--",
                    color="tab:orange",
                    label=f"fit, slope {report.slope:.3f}")
    if exact:
        ax.plot(exact, [1e-18] * len(exact), "s", color="tab:green", label="exact")
    ax.set_yscale("log")
    if report.log_abscissa:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("max node error")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def difference_figure(diff: np.ndarray, path: Path, title: str) -> None:
    """Node-wise |difference| heatmap (segments down, nodes across)."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    image = ax.imshow(np.asarray(diff, dtype=float), aspect="auto",
                      origin="lower", cmap="viridis")
    ax.set_xlabel("node")
    ax.set_ylabel("segment")
    ax.set_title(title)
    fig.colorbar(image, ax=ax, label="|difference|")
    fig.tight_layout()
    _save(fig, path)


def topology_figure(report: TopologyReport, path: Path) -> None:
    """Predicted versus assembled connection counts for every single delay."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    markers = {"up": "^", "horizontal": "o", "down": "v"}
    seen = set()
    for e in report.entries:
        label = e.direction if e.direction not in seen else None
        seen.add(e.direction)
        color = "tab:blue" if e.passed else "tab:red"
        ax.plot(e.predicted_count, e.actual_count, markers[e.direction],
                color=color, alpha=0.6, label=label)
    top = max(e.predicted_count for e in report.entries)
    ax.plot([0, top], [0, top], "--", color="tab:gray", linewidth=1)
    ax.set_xlabel("predicted connections")
    ax.set_ylabel("assembled nonzeros")
    ax.set_title("single-delay topology patterns")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    _save(fig, path)
