"""Direct evaluation of the networks unfolded from the delay system.

These functions rebuild the node values layer by layer (or step by step)
from weight matrices, without touching the time axis; agreement with the
integrators in :mod:`delayfold.dde` is the core claim the verification
harness checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import activations
from .dde import NodeGrid, SemilinearParams, _check_state
from .grid import NodeIndex, TimeGrid
from .modulation import (
    DelaySet,
    DriveSignal,
    ModulationProfile,
    compile_weights,
    full_delay_set,
)


@dataclass
class NetworkSpec:
    """The unfolded view: input, hidden, and output weights plus activations.

    ``hidden_weights`` holds one (N, N+1) matrix per segment 2..L, the
    last column being bias weights.  ``input_activation`` is the input
    preprocessing of the general construction; ``preprocessing`` is the
    first-layer function of the semilinear construction (identity unless
    configured otherwise).
    """

    grid: TimeGrid
    input_weights: np.ndarray
    hidden_weights: Sequence[np.ndarray]
    output_weights: np.ndarray | None = None
    input_activation: str = activations.TANH
    preprocessing: str = activations.IDENTITY
    output_activation: str = activations.IDENTITY
    semilinear: SemilinearParams | None = None
    initial_value: float = 0.0

    def __post_init__(self):
        N = self.grid.nodes_per_layer
        self.input_weights = np.asarray(self.input_weights, dtype=float)
        if self.input_weights.ndim != 2 or self.input_weights.shape[0] != N:
            raise ValueError(
                f"input weights must be ({N}, M+1), got {self.input_weights.shape}"
            )
        mats = [np.asarray(W, dtype=float) for W in self.hidden_weights]
        if len(mats) != self.grid.segment_count - 1:
            raise ValueError(
                f"expected {self.grid.segment_count - 1} hidden matrices, got {len(mats)}"
            )
        for i, W in enumerate(mats):
            if W.shape != (N, N + 1):
                raise ValueError(
                    f"hidden matrix {i} must be ({N}, {N + 1}), got {W.shape}"
                )
        self.hidden_weights = mats
        if self.output_weights is not None:
            self.output_weights = np.asarray(self.output_weights, dtype=float)
            if self.output_weights.ndim != 2 or self.output_weights.shape[1] != N + 1:
                raise ValueError(
                    f"output weights must be (P, {N + 1}), got {self.output_weights.shape}"
                )

    @property
    def input_size(self) -> int:
        """M, the number of input values (excluding the fixed bias slot)."""
        return self.input_weights.shape[1] - 1


def _check_input_vector(u: np.ndarray, width: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (width,):
        raise ValueError(f"input vector must have shape ({width},), got {u.shape}")
    if u[-1] != 1.0:
        raise ValueError(f"input vector must carry a fixed 1 in its last slot, got {u[-1]}")
    return u


def _with_bias(x: np.ndarray) -> np.ndarray:
    return np.append(x, 1.0)


def input_layer(spec: NetworkSpec, u) -> np.ndarray:
    """Preprocessed input J = f_in(W_in u), the drive of the first segment."""
    u = _check_input_vector(u, spec.input_weights.shape[1])
    f_in = activations.get_activation(spec.input_activation)
    return np.asarray(f_in(spec.input_weights @ u), dtype=float)


def output_layer(x_last: np.ndarray, output_weights: np.ndarray,
                 activation: str = activations.IDENTITY) -> np.ndarray:
    """Output vector f_out(W_out (x, 1))."""
    W = np.asarray(output_weights, dtype=float)
    x = np.asarray(x_last, dtype=float)
    if W.shape[1] != x.shape[0] + 1:
        raise ValueError(f"output weights width {W.shape[1]} != state width {x.shape[0] + 1}")
    f_out = activations.get_activation(activation)
    return np.asarray(f_out(W @ _with_bias(x)), dtype=float)


def forward_general(rhs: Callable, spec: NetworkSpec, profile: ModulationProfile,
                    delays: DelaySet, drive: DriveSignal | None = None,
                    u=None) -> NodeGrid:
    """Evaluate the general coupled-map network layer by layer.

    The recursion is identical to :func:`delayfold.dde.integrate_general`
    but sources delayed terms by direct index arithmetic into the
    previous layer; a source column outside [1, N] contributes zero.
    The input segment comes from ``drive`` when present, otherwise from
    the input layer applied to ``u``.
    """
    grid = spec.grid
    N, L = grid.nodes_per_layer, grid.segment_count
    theta = grid.theta
    if drive is not None and drive.input_segment is not None:
        J = drive.input_segment
    else:
        if u is None:
            raise ValueError("either a materialized drive or an input vector is required")
        J = input_layer(spec, u)
    offsets = delays.offsets(N)
    D = delays.count
    values = np.empty((L, N))
    x = spec.initial_value
    for n in range(1, N + 1):
        x = x + theta * float(rhs(x, float(J[n - 1]), np.zeros(D)))
        values[0, n - 1] = _check_state(x, NodeIndex(1, n))
    for segment in range(2, L + 1):
        table = profile.table(segment)
        prev = values[segment - 2]
        for n in range(1, N + 1):
            s = np.zeros(D)
            for d in range(D):
                v = table[d, n - 1]
                if v != 0.0:
                    j = n - offsets[d]
                    if 1 <= j <= N:
                        s[d] = v * prev[j - 1]
            z = drive.value(segment, n) if drive is not None else 0.0
            x = x + theta * float(rhs(x, z, s))
            values[segment - 1, n - 1] = _check_state(x, NodeIndex(segment, n))
    return NodeGrid(grid, values, spec.initial_value)


def _semilinear_layer(x_start: float, a: np.ndarray, decay: float, gain: float,
                      f: Callable, segment: int) -> np.ndarray:
    """One layer of the exact-step recursion, sequentially in n."""
    out = np.empty(len(a))
    x = x_start
    fa = np.asarray(f(a), dtype=float)
    for n in range(len(a)):
        x = decay * x + gain * float(fa[n])
        out[n] = _check_state(x, NodeIndex(segment, n + 1))
    return out


def forward_semilinear(spec: NetworkSpec, u) -> tuple[np.ndarray, np.ndarray | None]:
    """Evaluate the semilinear network; returns (layer states, output).

    Layer 1 uses the preactivation a1 = g(W_in u); hidden layers use
    a_l = W_l (x_{l-1}, 1); every layer runs the exact-step recursion
    x_n = e^{-alpha theta} x_{n-1} + gain f(a_n).  The output is None
    when ``spec`` carries no output weights.
    """
    if spec.semilinear is None:
        raise ValueError("spec has no semilinear parameters")
    grid = spec.grid
    decay, gain = spec.semilinear.step_coefficients(grid.theta)
    f = spec.semilinear.response()
    g = activations.get_activation(spec.preprocessing)
    u = _check_input_vector(u, spec.input_weights.shape[1])

    states = np.empty((grid.segment_count, grid.nodes_per_layer))
    a1 = np.asarray(g(spec.input_weights @ u), dtype=float)
    states[0] = _semilinear_layer(spec.initial_value, a1, decay, gain, f, 1)
    for i, W in enumerate(spec.hidden_weights):
        a = W @ _with_bias(states[i])
        states[i + 1] = _semilinear_layer(states[i][-1], a, decay, gain, f, i + 2)

    yhat = None
    if spec.output_weights is not None:
        yhat = output_layer(states[-1], spec.output_weights, spec.output_activation)
    return states, yhat


@dataclass(frozen=True)
class PropagatorMatrices:
    """Shift matrix A and accumulated propagator E = (Id - A)^(-1).

    A carries e^{-alpha theta} on the first subdiagonal; E is lower
    triangular with E[i, j] = e^{-(i-j) alpha theta}, built directly from
    that closed form rather than by inversion.
    """

    A: np.ndarray
    E: np.ndarray
    alpha: float
    theta: float

    @classmethod
    def build(cls, nodes_per_layer: int, alpha: float, theta: float) -> "PropagatorMatrices":
        N = nodes_per_layer
        q = np.exp(-alpha * theta)
        A = np.zeros((N, N))
        idx = np.arange(N - 1)
        A[idx + 1, idx] = q
        exponents = np.subtract.outer(np.arange(N), np.arange(N))
        E = np.where(exponents >= 0, q ** exponents.clip(min=0), 0.0)
        return cls(A=A, E=E, alpha=alpha, theta=theta)


def hidden_layer_matrix_form(x_prev: np.ndarray, W: np.ndarray,
                             params: SemilinearParams,
                             matrices: PropagatorMatrices) -> np.ndarray:
    """One hidden layer as a single matrix equation.

    x_l = (e^{-alpha theta} x_N, ..., e^{-N alpha theta} x_N)^T
        + gain * E f(W (x_{l-1}, 1)),
    which agrees with the sequential recursion of the same layer.
    """
    x_prev = np.asarray(x_prev, dtype=float)
    N = x_prev.shape[0]
    if W.shape != (N, N + 1):
        raise ValueError(f"weight matrix must be ({N}, {N + 1}), got {W.shape}")
    if matrices.E.shape != (N, N):
        raise ValueError(f"propagator built for N={matrices.E.shape[0]}, state has N={N}")
    if matrices.alpha != params.alpha:
        raise ValueError(
            f"propagator built for alpha={matrices.alpha}, params have alpha={params.alpha}"
        )
    decay, gain = params.step_coefficients(matrices.theta)
    f = params.response()
    carry = decay ** np.arange(1, N + 1) * x_prev[-1]
    fa = np.asarray(f(W @ _with_bias(x_prev)), dtype=float)
    return carry + gain * (matrices.E @ fa)


def forward_map_limit(spec: NetworkSpec, u) -> tuple[np.ndarray, np.ndarray | None]:
    """The large-theta limit: a plain multilayer perceptron pass.

    x_1 = f(g(W_in u)) / alpha and x_l = f(W_l (x_{l-1}, 1)) / alpha;
    carry terms are dropped entirely, so the result approximates
    :func:`forward_semilinear` up to terms of order e^{-alpha theta}.
    """
    if spec.semilinear is None:
        raise ValueError("spec has no semilinear parameters")
    alpha = spec.semilinear.alpha
    f = spec.semilinear.response()
    g = activations.get_activation(spec.preprocessing)
    u = _check_input_vector(u, spec.input_weights.shape[1])

    states = np.empty((spec.grid.segment_count, spec.grid.nodes_per_layer))
    states[0] = np.asarray(f(g(spec.input_weights @ u)), dtype=float) / alpha
    for i, W in enumerate(spec.hidden_weights):
        states[i + 1] = np.asarray(f(W @ _with_bias(states[i])), dtype=float) / alpha

    yhat = None
    if spec.output_weights is not None:
        yhat = output_layer(states[-1], spec.output_weights, spec.output_activation)
    return states, yhat


def forward_recurrent(W: np.ndarray, input_weights: np.ndarray, inputs,
                      grid: TimeGrid, dynamics, input_activation: str = activations.TANH,
                      delays: DelaySet | None = None, x0: float = 0.0) -> NodeGrid:
    """Evaluate the recurrent network for K steps.

    ``W`` is the (N, N) internal weight matrix, realizability of which
    under ``delays`` (the full set by default) is checked up front.
    ``inputs`` holds K rows u(k) of width M+1 with a fixed trailing 1;
    the drive of step k is z(k) = f_in(W_in u(k)).  ``dynamics`` is
    either :class:`SemilinearParams` or a general right-hand side
    f(x, z, s).  The first step depends only on x0 and u(1); delayed
    terms enter from step 2 on.
    """
    N, K = grid.nodes_per_layer, grid.segment_count
    W = np.asarray(W, dtype=float)
    if W.shape != (N, N):
        raise ValueError(f"internal weight matrix must be ({N}, {N}), got {W.shape}")
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[0] != K:
        raise ValueError(f"inputs must be ({K}, M+1), got {inputs.shape}")
    if not np.all(inputs[:, -1] == 1.0):
        raise ValueError("every input row must carry a fixed 1 in its last slot")
    if input_weights.shape != (N, inputs.shape[1]):
        raise ValueError(
            f"input weights must be ({N}, {inputs.shape[1]}), got {input_weights.shape}"
        )
    delays = delays if delays is not None else full_delay_set(N)
    values_table = compile_weights(W, delays, N)  # raises if W is unrealizable
    offsets = delays.offsets(N)
    D = delays.count

    f_in = activations.get_activation(input_activation)
    z = np.asarray(f_in(inputs @ input_weights.T), dtype=float)

    states = np.empty((K, N))
    if isinstance(dynamics, SemilinearParams):
        decay, gain = dynamics.step_coefficients(grid.theta)
        f = dynamics.response()
        states[0] = _semilinear_layer(x0, z[0], decay, gain, f, 1)
        for k in range(2, K + 1):
            a = z[k - 1] + W @ states[k - 2]
            states[k - 1] = _semilinear_layer(states[k - 2][-1], a, decay, gain, f, k)
    else:
        theta = grid.theta
        x = x0
        for n in range(1, N + 1):
            x = x + theta * float(dynamics(x, float(z[0, n - 1]), np.zeros(D)))
            states[0, n - 1] = _check_state(x, NodeIndex(1, n))
        for k in range(2, K + 1):
            prev = states[k - 2]
            for n in range(1, N + 1):
                s = np.zeros(D)
                for d in range(D):
                    v = values_table[d, n - 1]
                    if v != 0.0:
                        j = n - offsets[d]
                        if 1 <= j <= N:
                            s[d] = v * prev[j - 1]
                x = x + theta * float(dynamics(x, float(z[k - 1, n - 1]), s))
                states[k - 1, n - 1] = _check_state(x, NodeIndex(k, n))
    return NodeGrid(grid, states, x0)
