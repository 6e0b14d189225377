"""Integrators for the delay system.

Three routes are provided: the mixed forward/backward Euler node maps
for the general modulated system, the exact-step (variation of
constants) node maps for the semilinear system, and a fine-resolution
reference integrator used as an oracle in convergence studies.

All integrators walk the node grid in time order; delayed reads resolve
through :func:`delayfold.grid.delayed_source`, and a read whose
modulation value is exactly zero is skipped entirely, so such sources
are never touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import activations
from .grid import NodeIndex, SourceCase, TimeGrid, delayed_source, unit_index
from .modulation import DelaySet, DriveSignal, ModulationProfile

BLOWUP_LIMIT = 1e12

# beyond this alpha*theta the scaled-cumsum block scan of the reference
# integrator would lose precision; fall back to a plain scan
_BLOCK_SCAN_LIMIT = 30.0


class NumericalBlowupError(FloatingPointError):
    """State left the trusted range; ``index`` is the first offending node."""

    def __init__(self, index: NodeIndex, value: float):
        self.index = index
        self.value = value
        super().__init__(
            f"|x| exceeded {BLOWUP_LIMIT:g} (got {value!r}) at node "
            f"(segment {index.segment}, node {index.node})"
        )


class HistoryRequiredError(ValueError):
    """A nonzero-modulated read fell at time <= 0 with no history value."""


@dataclass(frozen=True)
class SemilinearParams:
    """Parameters of the semilinear system dx/dt = -alpha x + f(a(t))."""

    alpha: float
    nonlinearity: str = activations.SINE
    eta: float = 1.0
    p: float = 2.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if self.nonlinearity not in activations.ELEMENTWISE:
            raise ValueError(
                f"nonlinearity must be one of {activations.ELEMENTWISE}, got {self.nonlinearity!r}"
            )
        if self.nonlinearity == activations.MACKEY_GLASS:
            if not (math.isfinite(self.eta) and math.isfinite(self.p) and self.p > 0):
                raise ValueError(f"mackey-glass needs finite eta and p > 0, got {self.eta}, {self.p}")

    def response(self) -> Callable:
        return activations.get_activation(self.nonlinearity, self.eta, self.p)

    def step_coefficients(self, step: float) -> tuple[float, float]:
        """Decay e^{-alpha h} and gain (1 - e^{-alpha h}) / alpha of one exact step."""
        decay = math.exp(-self.alpha * step)
        gain = -math.expm1(-self.alpha * step) / self.alpha
        return decay, gain


@dataclass(frozen=True)
class History:
    """Initial state x(0) plus optional values at negative grid times.

    ``table[i]`` holds x(-(i+1) * theta).  The table may be absent
    whenever no modulation reaches back past t = 0.
    """

    initial_value: float = 0.0
    table: np.ndarray | None = None

    def __post_init__(self):
        if not math.isfinite(self.initial_value):
            raise ValueError(f"initial value must be finite, got {self.initial_value}")
        if self.table is not None:
            table = np.asarray(self.table, dtype=float)
            if table.ndim != 1 or not np.all(np.isfinite(table)):
                raise ValueError("history table must be a finite vector")
            object.__setattr__(self, "table", table)

    def lookup(self, unit: int) -> float:
        """Value at grid time unit <= 0 (0 means x(0))."""
        if unit > 0:
            raise ValueError(f"history offsets are <= 0, got {unit}")
        if unit == 0:
            return self.initial_value
        i = -unit
        if self.table is None or i > len(self.table):
            raise HistoryRequiredError(
                f"history value at grid unit {unit} required but not provided"
            )
        return float(self.table[i - 1])

    def at_fine(self, fine_unit: int, substeps: int) -> float:
        """Linear interpolation between grid-unit history values on a fine grid."""
        base, rem = divmod(fine_unit, substeps)  # floor division: base <= 0
        if rem == 0:
            return self.lookup(base)
        frac = rem / substeps
        return (1.0 - frac) * self.lookup(base) + frac * self.lookup(base + 1)


@dataclass(eq=False)
class NodeGrid:
    """Node values of one run: values[segment-1, node-1] plus x(0)."""

    grid: TimeGrid
    values: np.ndarray
    initial_value: float = 0.0

    def __post_init__(self):
        expected = (self.grid.segment_count, self.grid.nodes_per_layer)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != grid shape {expected}")

    def value(self, idx: NodeIndex) -> float:
        return float(self.values[idx.segment - 1, idx.node - 1])

    def times(self) -> np.ndarray:
        units = np.arange(1, self.grid.total_nodes + 1, dtype=float)
        return (units * self.grid.theta).reshape(self.values.shape)

    def rows(self):
        """Yield (segment, node, time, value) for CSV emission."""
        times = self.times()
        for s in range(self.grid.segment_count):
            for n in range(self.grid.nodes_per_layer):
                yield s + 1, n + 1, times[s, n], self.values[s, n]


def semilinear_rhs(params: SemilinearParams) -> Callable:
    """The semilinear family written as a general right-hand side.

    Returns f(x, z, s) = -alpha x + phi(z + sum(s)) for use with
    :func:`integrate_general`; ``s`` receives the already-modulated
    delayed values.
    """
    phi = params.response()
    alpha = params.alpha

    def rhs(x, z, s):
        return -alpha * x + phi(z + float(np.sum(s)))

    return rhs


def _check_state(x: float, idx: NodeIndex) -> float:
    if not abs(x) <= BLOWUP_LIMIT:  # also catches NaN
        raise NumericalBlowupError(idx, x)
    return x


def _delayed_read(values_flat, history, grid, idx, delay_units):
    ref = delayed_source(grid, idx, delay_units)
    if ref.case is SourceCase.HISTORY:
        if history is None:
            raise HistoryRequiredError(
                f"node (segment {idx.segment}, node {idx.node}) reads history "
                f"at offset {ref.history_offset} but none was supplied"
            )
        return history.lookup(ref.history_offset)
    src = ref.index
    return values_flat[(src.segment - 1) * grid.nodes_per_layer + src.node - 1]


def integrate_general(rhs: Callable, drive: DriveSignal, profile: ModulationProfile,
                      delays: DelaySet, grid: TimeGrid,
                      history: History | None = None) -> NodeGrid:
    """Mixed forward/backward Euler node maps for the general system.

    Each node is x_n = x_prev + theta * f(x_prev, z_n, s_1, ..., s_D)
    with x_prev the previous node (the previous segment's last node at a
    segment boundary), z sampled at the node time, and s_d the modulated
    delayed values.  Zero-modulated sources contribute exactly 0 and are
    never read.
    """
    history = history if history is not None else History()
    N, S = grid.nodes_per_layer, grid.segment_count
    theta = grid.theta
    D = delays.count
    flat = np.empty(S * N)
    x_prev = history.initial_value
    for unit in range(1, S * N + 1):
        idx = unit_index(grid, unit)
        table = profile.table(idx.segment)
        s = np.zeros(D)
        for d, n_d in enumerate(delays):
            v = table[d, idx.node - 1]
            if v != 0.0:
                s[d] = v * _delayed_read(flat, history, grid, idx, n_d)
        z = drive.value(idx.segment, idx.node)
        x = x_prev + theta * float(rhs(x_prev, z, s))
        flat[unit - 1] = _check_state(x, idx)
        x_prev = x
    return NodeGrid(grid, flat.reshape(S, N), history.initial_value)


def integrate_semilinear(params: SemilinearParams, drive: DriveSignal,
                         profile: ModulationProfile, delays: DelaySet,
                         grid: TimeGrid, history: History | None = None) -> NodeGrid:
    """Exact-step node maps for the semilinear system.

    Each node is x_n = e^{-alpha theta} x_prev + gain * f(a_n) with
    a_n = z_n + sum_d v_d x(t_n - tau_d); on the first segment the
    modulation vanishes, so a_n reduces to the drive.
    """
    history = history if history is not None else History()
    N, S = grid.nodes_per_layer, grid.segment_count
    decay, gain = params.step_coefficients(grid.theta)
    f = params.response()
    flat = np.empty(S * N)
    x_prev = history.initial_value
    for unit in range(1, S * N + 1):
        idx = unit_index(grid, unit)
        table = profile.table(idx.segment)
        a = drive.value(idx.segment, idx.node)
        for d, n_d in enumerate(delays):
            v = table[d, idx.node - 1]
            if v != 0.0:
                a += v * _delayed_read(flat, history, grid, idx, n_d)
        x = decay * x_prev + gain * float(f(a))
        flat[unit - 1] = _check_state(x, idx)
        x_prev = x
    return NodeGrid(grid, flat.reshape(S, N), history.initial_value)


def _reference_weights(alpha: float, h: float) -> tuple[float, float, float]:
    """Decay and endpoint weights of one exponential-trapezoid substep.

    The variation-of-constants integral of f(a(t)) over a substep, with
    f(a) interpolated linearly between the endpoints, gives weights
    w0, w1 with w0 + w1 = (1 - e^{-alpha h}) / alpha; both are evaluated
    in expm1 form to stay accurate for small alpha h.
    """
    decay = math.exp(-alpha * h)
    gain = -math.expm1(-alpha * h) / alpha
    w1 = (math.expm1(-alpha * h) + alpha * h) / (alpha * alpha * h)
    w0 = gain - w1
    return decay, w0, w1


def integrate_reference(params: SemilinearParams, drive: DriveSignal,
                        profile: ModulationProfile, delays: DelaySet,
                        grid: TimeGrid, history: History | None = None,
                        substeps: int = 1) -> NodeGrid:
    """Fine-resolution oracle for the semilinear system, sampled at node times.

    Integrates with step h = theta / substeps; over each substep the
    delayed contributions are linearly interpolated between the substep
    endpoints (which land exactly on the fine grid, because all delays
    are grid multiples) and the variation-of-constants integral is taken
    exactly.  For substeps = 1 and piecewise-constant activation signals
    this reproduces :func:`integrate_semilinear`; as substeps grows it
    converges to the continuous-time solution at second order.
    """
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    history = history if history is not None else History()
    N, S = grid.nodes_per_layer, grid.segment_count
    m = substeps
    h = grid.theta / m
    decay, w0, w1 = _reference_weights(params.alpha, h)
    f = params.response()
    use_scan = params.alpha * grid.theta <= _BLOCK_SCAN_LIMIT
    if use_scan:
        up = np.exp(params.alpha * h * np.arange(m))
        down = np.exp(-params.alpha * h * np.arange(m))

    lags = [n_d * m for n_d in delays]
    fine = np.empty(S * N * m + 1)
    fine[0] = history.initial_value
    offsets = np.arange(m)

    def gather(start, lag):
        pos = start + offsets - lag
        if pos[0] >= 0:
            return fine[pos]
        vals = np.empty(m)
        neg = pos < 0
        vals[neg] = [history.at_fine(int(i), m) for i in pos[neg]]
        vals[~neg] = fine[pos[~neg]]
        return vals

    for unit in range(1, S * N + 1):
        idx = unit_index(grid, unit)
        table = profile.table(idx.segment)
        z = drive.value(idx.segment, idx.node)
        base = (unit - 1) * m
        a_left = np.full(m, z)
        a_right = np.full(m, z)
        for d, n_d in enumerate(delays):
            v = table[d, idx.node - 1]
            if v != 0.0:
                a_left += v * gather(base, lags[d])
                a_right += v * gather(base + 1, lags[d])
        g_step = w0 * np.asarray(f(a_left), dtype=float) \
            + w1 * np.asarray(f(a_right), dtype=float)
        x_base = fine[base]
        if use_scan:
            block = down * (decay * x_base + np.cumsum(g_step * up))
        else:
            block = np.empty(m)
            x = x_base
            for j in range(m):
                x = decay * x + g_step[j]
                block[j] = x
        fine[base + 1:base + m + 1] = block
        _check_state(float(np.max(np.abs(block))), idx)

    values = fine[m::m].reshape(S, N).copy()
    return NodeGrid(grid, values, history.initial_value)
