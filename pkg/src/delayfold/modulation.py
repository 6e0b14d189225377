"""Delay sets, modulation step functions, drive signals, and their weight view.

The step heights of the modulation functions are the connection weights
of the unfolded network.  This module validates the structural
properties those step functions must satisfy, evaluates them in time,
and converts between the step-height tables and weight matrices in both
directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .grid import TimeGrid, unit_at_time, unit_index

FEEDFORWARD = "feedforward"
RECURRENT = "recurrent"

UP = "up"
HORIZONTAL = "horizontal"
DOWN = "down"


class UnrealizableWeightsError(ValueError):
    """A target weight matrix has nonzero entries the delay set cannot carry.

    ``positions`` lists every offending 1-based (node, column) pair, or
    (segment, node, column) triple when compiling a multi-layer target.
    """

    def __init__(self, positions):
        self.positions = list(positions)
        listed = ", ".join(str(p) for p in self.positions)
        super().__init__(
            f"no delay supports the nonzero weight entries at: {listed}"
        )


@dataclass(frozen=True)
class DelaySet:
    """Strictly increasing positive integer delays, in units of theta."""

    delays: tuple[int, ...]

    def __post_init__(self):
        delays = tuple(int(d) for d in self.delays)
        object.__setattr__(self, "delays", delays)
        if not delays:
            raise ValueError("delay set must not be empty")
        if delays[0] < 1:
            raise ValueError(f"delays must be positive, got {delays[0]}")
        if any(a >= b for a, b in zip(delays, delays[1:])):
            raise ValueError(f"delays must be strictly increasing, got {delays}")

    def __len__(self) -> int:
        return len(self.delays)

    def __iter__(self) -> Iterator[int]:
        return iter(self.delays)

    @property
    def count(self) -> int:
        return len(self.delays)

    @property
    def max_delay(self) -> int:
        return self.delays[-1]

    def offsets(self, nodes_per_layer: int) -> tuple[int, ...]:
        """The shifted delays n'_d = n_d - N that index the source column."""
        return tuple(d - nodes_per_layer for d in self.delays)

    def position(self, delay_units: int) -> int | None:
        """0-based position of a delay value in the set, or None."""
        try:
            return self.delays.index(delay_units)
        except ValueError:
            return None


def full_delay_set(nodes_per_layer: int) -> DelaySet:
    """The delay set (1, 2, ..., 2N-1) that makes every connection realizable."""
    if nodes_per_layer < 1:
        raise ValueError(f"nodes per layer must be >= 1, got {nodes_per_layer}")
    return DelaySet(tuple(range(1, 2 * nodes_per_layer)))


@dataclass(frozen=True)
class TopologyPattern:
    """Direction and number of connections induced by a single delay."""

    direction: str
    count: int


def topology_pattern(delay_units: int, nodes_per_layer: int) -> TopologyPattern:
    """Connection pattern of one delay between consecutive segments.

    Delays shorter than the clock cycle produce ``delay_units`` upward
    connections, a delay of exactly one clock cycle produces N horizontal
    ones, and longer delays produce 2N - delay_units downward ones.
    """
    N = nodes_per_layer
    if not 0 < delay_units < 2 * N:
        raise ValueError(f"delay {delay_units} outside (0, {2 * N})")
    if delay_units < N:
        return TopologyPattern(UP, delay_units)
    if delay_units == N:
        return TopologyPattern(HORIZONTAL, N)
    return TopologyPattern(DOWN, 2 * N - delay_units)


def legal_positions(delays: DelaySet, nodes_per_layer: int) -> np.ndarray:
    """Boolean (D, N) mask of positions where a modulation value may be nonzero.

    Position (d, n) is legal exactly when the delayed read of node n lands
    in the previous segment, i.e. n <= n_d < N + n; equivalently the
    target column j = n - n'_d falls inside [1, N].
    """
    N = nodes_per_layer
    n = np.arange(1, N + 1)
    mask = np.zeros((delays.count, N), dtype=bool)
    for d, n_d in enumerate(delays):
        mask[d] = (n <= n_d) & (n_d < N + n)
    return mask


def _readonly(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ModulationProfile:
    """Step heights of the D modulation functions on the theta grid.

    Feed-forward profiles store one (D, N) table per segment 2..L; the
    first segment carries no table because its modulation is structurally
    zero.  Recurrent profiles store a single (D, N) table applied to
    every segment k >= 2 (the step functions are T-periodic).

    ``first_segment`` optionally overrides the zero modulation on the
    first segment; it exists for negative-control experiments and makes
    the profile invalid under validation.
    """

    mode: str
    values: np.ndarray
    first_segment: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in (FEEDFORWARD, RECURRENT):
            raise ValueError(f"unknown mode {self.mode!r}")
        values = _readonly(self.values)
        expected = 3 if self.mode == FEEDFORWARD else 2
        if values.ndim != expected:
            raise ValueError(
                f"{self.mode} profile table must have {expected} axes, got {values.ndim}"
            )
        object.__setattr__(self, "values", values)
        if self.first_segment is not None:
            first = _readonly(self.first_segment)
            if first.shape != values.shape[-2:]:
                raise ValueError(
                    f"first-segment table shape {first.shape} does not match {values.shape[-2:]}"
                )
            object.__setattr__(self, "first_segment", first)

    @classmethod
    def feedforward(cls, values, first_segment=None) -> "ModulationProfile":
        return cls(FEEDFORWARD, np.asarray(values, dtype=float), first_segment)

    @classmethod
    def recurrent(cls, values, first_segment=None) -> "ModulationProfile":
        return cls(RECURRENT, np.asarray(values, dtype=float), first_segment)

    @property
    def delay_count(self) -> int:
        return self.values.shape[-2]

    @property
    def nodes_per_layer(self) -> int:
        return self.values.shape[-1]

    @property
    def segment_count(self) -> int | None:
        """Number of segments the profile covers; None for recurrent (any)."""
        if self.mode == FEEDFORWARD:
            return self.values.shape[0] + 1
        return None

    def table(self, segment: int) -> np.ndarray:
        """(D, N) step heights active on a segment (zeros on segment 1)."""
        if segment < 1:
            raise ValueError(f"segment must be >= 1, got {segment}")
        if segment == 1:
            if self.first_segment is not None:
                return self.first_segment
            return np.zeros(self.values.shape[-2:])
        if self.mode == RECURRENT:
            return self.values
        if segment > self.values.shape[0] + 1:
            raise ValueError(f"segment {segment} beyond profile with {self.values.shape[0] + 1}")
        return self.values[segment - 2]

    def value(self, segment: int, d: int, node: int) -> float:
        """Step height v of delay position ``d`` (0-based) at node (segment, node)."""
        return float(self.table(segment)[d, node - 1])


@dataclass(frozen=True)
class DriveSignal:
    """The theta-step driving signal z(t).

    Feed-forward mode carries the input segment J (length N, active on
    segment 1) and per-node biases for segments 2..L.  Recurrent mode
    carries one row of N values per step.
    """

    mode: str
    input_segment: np.ndarray | None = None
    biases: np.ndarray | None = None
    steps: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in (FEEDFORWARD, RECURRENT):
            raise ValueError(f"unknown mode {self.mode!r}")
        for name in ("input_segment", "biases", "steps"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = _readonly(arr)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)
        if self.input_segment is not None and self.input_segment.ndim != 1:
            raise ValueError("input segment must be a vector")
        if self.biases is not None and self.biases.ndim != 2:
            raise ValueError("biases must be a (segments-1, N) table")
        if self.steps is not None and self.steps.ndim != 2:
            raise ValueError("steps must be a (K, N) table")

    @classmethod
    def feedforward(cls, input_segment=None, biases=None) -> "DriveSignal":
        return cls(FEEDFORWARD, input_segment=input_segment, biases=biases)

    @classmethod
    def recurrent(cls, steps) -> "DriveSignal":
        return cls(RECURRENT, steps=steps)

    def value(self, segment: int, node: int) -> float:
        """z at node (segment, node)."""
        if self.mode == RECURRENT:
            if self.steps is None:
                raise ValueError("recurrent drive has no step table")
            return float(self.steps[segment - 1, node - 1])
        if segment == 1:
            if self.input_segment is None:
                raise ValueError("feed-forward drive has no input segment")
            return float(self.input_segment[node - 1])
        if self.biases is None:
            return 0.0
        return float(self.biases[segment - 2, node - 1])


@dataclass(frozen=True)
class Violation:
    """One violated structural property with its offending location."""

    prop: str
    location: tuple
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def violated_properties(self) -> set[str]:
        return {v.prop for v in self.violations}

    def add(self, prop: str, location: tuple, detail: str) -> None:
        self.violations.append(Violation(prop, location, detail))


def validate_delays(delays: Sequence[int] | DelaySet, grid: TimeGrid,
                    report: ValidationReport | None = None) -> ValidationReport:
    """Check the delay ordering and range constraints against a grid."""
    report = report if report is not None else ValidationReport()
    seq = tuple(delays)
    for i, n_d in enumerate(seq):
        if int(n_d) != n_d or n_d < 1:
            report.add("I", (i,), f"delay #{i} = {n_d} is not a positive integer")
    for i, (a, b) in enumerate(zip(seq, seq[1:])):
        if a >= b:
            report.add("I", (i,), f"delays not strictly increasing at #{i}: {a} >= {b}")
    bound = 2 * grid.nodes_per_layer
    for i, n_d in enumerate(seq):
        if n_d >= bound:
            report.add("I", (i,), f"delay #{i} = {n_d} must be < 2N = {bound}")
    return report


def validate(profile: ModulationProfile, delays: Sequence[int] | DelaySet,
             grid: TimeGrid) -> ValidationReport:
    """Report every violated structural property of a profile.

    Returns an empty report iff the delays satisfy the ordering and range
    constraints (I), the modulation vanishes wherever a delayed read
    would leave the previous segment (III), and nothing modulates the
    first segment (IV).  Shape mismatches against the grid are reported
    under the pseudo-property "shape".
    """
    report = ValidationReport()
    validate_delays(delays, grid, report)
    seq = tuple(delays)

    N = grid.nodes_per_layer
    if profile.nodes_per_layer != N:
        report.add("shape", (), f"profile has {profile.nodes_per_layer} nodes per layer, grid has {N}")
        return report
    if profile.delay_count != len(seq):
        report.add("shape", (), f"profile carries {profile.delay_count} delays, delay set has {len(seq)}")
        return report
    if profile.mode == FEEDFORWARD and profile.segment_count != grid.segment_count:
        report.add("shape", (),
                   f"profile covers {profile.segment_count} segments, grid has {grid.segment_count}")
        return report

    def check_table(tag, table, segment_location):
        for d, n_d in enumerate(seq):
            for n in range(1, N + 1):
                v = table[d, n - 1]
                if v != 0.0 and not (n <= n_d < N + n):
                    report.add(
                        "III",
                        segment_location + (d, n),
                        f"{tag}: v[d={d}, n={n}] = {v} but delay {n_d} "
                        f"does not source from the previous segment",
                    )

    if profile.mode == FEEDFORWARD:
        for segment in range(2, profile.values.shape[0] + 2):
            check_table(f"segment {segment}", profile.values[segment - 2], (segment,))
    else:
        check_table("recurrent table", profile.values, ())

    if profile.first_segment is not None:
        check_table("first segment", profile.first_segment, (1,))
        nz = np.argwhere(profile.first_segment != 0.0)
        for d, col in nz:
            report.add(
                "IV",
                (1, int(d), int(col) + 1),
                f"modulation value {profile.first_segment[d, col]} on the first segment",
            )
    return report


def modulation_at(profile: ModulationProfile, delays: DelaySet, grid: TimeGrid,
                  d: int, t: float) -> float:
    """Evaluate modulation function ``d`` (0-based position) at time t.

    Uses the right-closed sub-interval convention; the first segment
    reads as zero unless a first-segment override is present.
    """
    if not 0 <= d < delays.count:
        raise ValueError(f"delay position {d} outside [0, {delays.count})")
    idx = unit_index(grid, unit_at_time(grid, t))
    return profile.value(idx.segment, d, idx.node)


def assemble_weight_matrix(profile: ModulationProfile, delays: DelaySet,
                           grid: TimeGrid, segment: int,
                           biases: np.ndarray | None = None) -> np.ndarray:
    """Arrange a segment's step heights into a weight matrix.

    Entry (n, j) receives v_{d,n} for the unique delay with
    j = n - n'_d; the nonzero entries of delay d sit on the diagonal
    offset N - n_d.  Feed-forward matrices are (N, N+1) with the last
    column holding the bias weights (zeros unless ``biases`` is given);
    recurrent matrices are (N, N).
    """
    N = grid.nodes_per_layer
    if profile.mode == FEEDFORWARD:
        if segment < 2:
            raise ValueError("feed-forward weight matrices exist for segments >= 2")
        W = np.zeros((N, N + 1))
    else:
        if biases is not None:
            raise ValueError("recurrent weight matrices carry no bias column")
        W = np.zeros((N, N))
    table = profile.table(segment)
    for d, n_d in enumerate(delays):
        offset = n_d - N
        for n in range(1, N + 1):
            j = n - offset
            if 1 <= j <= N:
                # distinct delays give distinct offsets, so no slot is written twice
                assert W[n - 1, j - 1] == 0.0
                W[n - 1, j - 1] = table[d, n - 1]
    if biases is not None:
        b = np.asarray(biases, dtype=float)
        if b.shape != (N,):
            raise ValueError(f"bias column must have shape ({N},), got {b.shape}")
        W[:, N] = b
    return W


def compile_weights(target: np.ndarray, delays: DelaySet,
                    nodes_per_layer: int) -> np.ndarray:
    """Invert :func:`assemble_weight_matrix` for a single matrix.

    Returns the (D, N) step-height table realizing ``target``; the values
    are copied verbatim so a compile/assemble round trip is bitwise
    exact.  A trailing bias column (width N+1) is ignored here.  Raises
    UnrealizableWeightsError listing every nonzero entry whose required
    delay N + n - j is missing from the set.
    """
    N = nodes_per_layer
    W = np.asarray(target, dtype=float)
    if W.shape not in ((N, N), (N, N + 1)):
        raise ValueError(f"target must be ({N}, {N}) or ({N}, {N + 1}), got {W.shape}")
    values = np.zeros((delays.count, N))
    unsupported = []
    for n in range(1, N + 1):
        for j in range(1, N + 1):
            w = W[n - 1, j - 1]
            if w == 0.0:
                continue
            d = delays.position(N + n - j)
            if d is None:
                unsupported.append((n, j))
            else:
                values[d, n - 1] = w
    if unsupported:
        raise UnrealizableWeightsError(unsupported)
    return values


def compile_profile(targets, delays: DelaySet, grid: TimeGrid,
                    mode: str = FEEDFORWARD) -> ModulationProfile:
    """Compile one matrix (recurrent) or one per segment 2..L (feed-forward)."""
    if mode == RECURRENT:
        return ModulationProfile.recurrent(
            compile_weights(targets, delays, grid.nodes_per_layer)
        )
    mats = list(targets)
    if len(mats) != grid.segment_count - 1:
        raise ValueError(
            f"expected {grid.segment_count - 1} matrices for segments 2..L, got {len(mats)}"
        )
    tables = []
    unsupported = []
    for i, W in enumerate(mats):
        try:
            tables.append(compile_weights(W, delays, grid.nodes_per_layer))
        except UnrealizableWeightsError as err:
            unsupported.extend((i + 2, n, j) for n, j in err.positions)
            tables.append(np.zeros((delays.count, grid.nodes_per_layer)))
    if unsupported:
        raise UnrealizableWeightsError(unsupported)
    if not tables:
        return ModulationProfile.feedforward(
            np.zeros((0, delays.count, grid.nodes_per_layer))
        )
    return ModulationProfile.feedforward(np.stack(tables))
