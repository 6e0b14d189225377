"""Temporal discretization of the delay system.

A clock cycle of length T is split into N sub-intervals of width
theta = T/N.  The solution value at the right endpoint of sub-interval n
of cycle ell is node (ell, n); sub-intervals are half-open on the left
and closed on the right, so a time sitting exactly on a boundary belongs
to the earlier-indexed node.

All interval bookkeeping is done in integer grid units (multiples of
theta), which keeps delay arithmetic exact; real times only appear at
the edges of the API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class SourceCase(Enum):
    """Interval that a delayed time point t - tau falls into."""

    SAME_SEGMENT = "same_segment"
    PREVIOUS_SEGMENT = "previous_segment"
    TWO_BACK = "two_back"
    HISTORY = "history"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform node grid: ``segment_count`` clock cycles of ``nodes_per_layer`` nodes.

    ``clock_cycle`` is the cycle length T and ``nodes_per_layer`` is N;
    the node distance theta = T/N is always derived, never set on its own.
    A segment is one clock cycle: a layer in feed-forward mode, a step in
    recurrent mode.  Instances are immutable and safe to share.
    """

    clock_cycle: float
    nodes_per_layer: int
    segment_count: int

    def __post_init__(self):
        if not self.clock_cycle > 0.0:
            raise ValueError(f"clock cycle must be positive, got {self.clock_cycle}")
        if self.nodes_per_layer < 1:
            raise ValueError(f"nodes per layer must be >= 1, got {self.nodes_per_layer}")
        if self.segment_count < 1:
            raise ValueError(f"segment count must be >= 1, got {self.segment_count}")

    @property
    def theta(self) -> float:
        return self.clock_cycle / self.nodes_per_layer

    @property
    def total_nodes(self) -> int:
        return self.nodes_per_layer * self.segment_count

    @property
    def horizon(self) -> float:
        return self.segment_count * self.clock_cycle


@dataclass(frozen=True)
class NodeIndex:
    """1-based (segment, node) pair addressing one node of the grid."""

    segment: int
    node: int


@dataclass(frozen=True)
class SourceRef:
    """Where a delayed read resolves to.

    For the three in-grid cases ``index`` names the source node.  For
    ``HISTORY`` the read falls at time <= 0 and ``history_offset`` holds
    the source position in grid units (0 means the initial state x(0),
    negative values index a history table).
    """

    case: SourceCase
    index: NodeIndex | None = None
    history_offset: int | None = None


def check_index(grid: TimeGrid, idx: NodeIndex) -> None:
    """Raise ValueError unless ``idx`` addresses a node of ``grid``."""
    if not 1 <= idx.node <= grid.nodes_per_layer:
        raise ValueError(
            f"node {idx.node} outside [1, {grid.nodes_per_layer}]"
        )
    if not 1 <= idx.segment <= grid.segment_count:
        raise ValueError(
            f"segment {idx.segment} outside [1, {grid.segment_count}]"
        )


def grid_unit(grid: TimeGrid, idx: NodeIndex) -> int:
    """Absolute 1-based position of a node, counting in theta units."""
    check_index(grid, idx)
    return (idx.segment - 1) * grid.nodes_per_layer + idx.node


def unit_index(grid: TimeGrid, unit: int) -> NodeIndex:
    """Inverse of :func:`grid_unit` for units in [1, total_nodes]."""
    if not 1 <= unit <= grid.total_nodes:
        raise ValueError(f"grid unit {unit} outside [1, {grid.total_nodes}]")
    segment, node = divmod(unit - 1, grid.nodes_per_layer)
    return NodeIndex(segment + 1, node + 1)


def node_time(grid: TimeGrid, idx: NodeIndex) -> float:
    """Absolute time (ell-1)*T + n*theta of a node.

    Computed as ((ell-1)*N + n) * theta so that delayed times differ by
    exact integer multiples of theta.
    """
    return grid_unit(grid, idx) * grid.theta


def unit_at_time(grid: TimeGrid, t: float) -> int:
    """Grid unit of the sub-interval containing time t (right-closed).

    Times within one part in 1e9 of a boundary are snapped onto it, so a
    boundary time belongs to the node whose right endpoint it is.
    """
    if not 0.0 < t <= grid.horizon * (1.0 + 1e-12):
        raise ValueError(f"time {t} outside the simulated horizon (0, {grid.horizon}]")
    ratio = t / grid.theta
    nearest = round(ratio)
    if nearest >= 1 and abs(ratio - nearest) <= 1e-9 * max(1.0, abs(ratio)):
        unit = int(nearest)
    else:
        unit = int(math.ceil(ratio))
    return min(unit, grid.total_nodes)


def delayed_source(grid: TimeGrid, idx: NodeIndex, delay_units: int) -> SourceRef:
    """Resolve the node supplying x(t - tau) for node ``idx`` and tau = delay_units * theta.

    The delayed time point falls in the same segment when delay_units < n,
    in the previous segment when n <= delay_units < N + n, and two
    segments back when N + n <= delay_units; a read landing at time <= 0
    resolves to HISTORY instead.
    """
    check_index(grid, idx)
    n_max = 2 * grid.nodes_per_layer
    if not 0 < delay_units < n_max:
        raise ValueError(f"delay {delay_units} outside (0, {n_max})")

    source_unit = grid_unit(grid, idx) - delay_units
    if source_unit <= 0:
        return SourceRef(SourceCase.HISTORY, history_offset=source_unit)

    N, n, segment = grid.nodes_per_layer, idx.node, idx.segment
    if delay_units < n:
        case = SourceCase.SAME_SEGMENT
        source = NodeIndex(segment, n - delay_units)
    elif delay_units < N + n:
        case = SourceCase.PREVIOUS_SEGMENT
        source = NodeIndex(segment - 1, N + n - delay_units)
    else:
        case = SourceCase.TWO_BACK
        source = NodeIndex(segment - 2, 2 * N + n - delay_units)
    assert grid_unit(grid, source) == source_unit
    return SourceRef(case, index=source)
