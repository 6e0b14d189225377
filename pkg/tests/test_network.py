import math

import numpy as np
import pytest

from delayfold.dde import (
    History,
    SemilinearParams,
    integrate_general,
    integrate_semilinear,
    semilinear_rhs,
)
from delayfold.grid import TimeGrid
from delayfold.modulation import (
    DelaySet,
    DriveSignal,
    ModulationProfile,
    UnrealizableWeightsError,
    assemble_weight_matrix,
    compile_profile,
    full_delay_set,
    legal_positions,
)
from delayfold.network import (
    NetworkSpec,
    PropagatorMatrices,
    forward_general,
    forward_map_limit,
    forward_recurrent,
    forward_semilinear,
    hidden_layer_matrix_form,
    input_layer,
    output_layer,
)


def make_spec(grid, rng, M=3, P=2, alpha=1.0, nonlinearity="sine", x0=0.0,
              delays=None, profile=None, biases=None):
    """Random semilinear spec whose hidden weights come from a legal profile."""
    N, L = grid.nodes_per_layer, grid.segment_count
    delays = delays if delays is not None else full_delay_set(N)
    if profile is None:
        mask = legal_positions(delays, N)
        tables = [
            np.where(mask, rng.uniform(-1, 1, mask.shape) / np.sqrt(N), 0.0)
            for _ in range(L - 1)
        ]
        profile = ModulationProfile.feedforward(
            np.stack(tables) if tables else np.zeros((0, delays.count, N))
        )
    if biases is None:
        biases = rng.uniform(-0.5, 0.5, (L - 1, N))
    hidden = [
        assemble_weight_matrix(profile, delays, grid, seg, biases=biases[seg - 2])
        for seg in range(2, L + 1)
    ]
    spec = NetworkSpec(
        grid=grid,
        input_weights=rng.uniform(-1, 1, (N, M + 1)),
        hidden_weights=hidden,
        output_weights=rng.uniform(-1, 1, (P, N + 1)),
        semilinear=SemilinearParams(alpha=alpha, nonlinearity=nonlinearity),
        initial_value=x0,
    )
    return spec, profile, delays, biases


class TestInputLayer:
    def test_zero_weights(self):
        grid = TimeGrid(1.0, 3, 2)
        spec = NetworkSpec(grid, np.zeros((3, 4)), [np.zeros((3, 4))])
        u = np.array([0.5, -1.0, 2.0, 1.0])
        assert np.array_equal(input_layer(spec, u), np.zeros(3))

    def test_identity_passthrough(self):
        grid = TimeGrid(1.0, 3, 1)
        W_in = np.zeros((3, 4))
        W_in[:2, :2] = np.eye(2)
        spec = NetworkSpec(grid, W_in, [], input_activation="identity")
        u = np.array([0.2, -0.4, 9.9, 1.0])
        J = input_layer(spec, u)
        assert J[0] == 0.2 and J[1] == -0.4 and J[2] == 0.0

    def test_tanh_preprocessing(self):
        rng = np.random.default_rng(0)
        grid = TimeGrid(1.0, 4, 1)
        W_in = rng.normal(size=(4, 3))
        spec = NetworkSpec(grid, W_in, [], input_activation="tanh")
        u = np.array([1.5, -0.3, 1.0])
        assert np.allclose(input_layer(spec, u), np.tanh(W_in @ u))

    def test_requires_fixed_one(self):
        grid = TimeGrid(1.0, 2, 1)
        spec = NetworkSpec(grid, np.zeros((2, 3)), [])
        with pytest.raises(ValueError):
            input_layer(spec, np.array([0.1, 0.2, 0.3]))
        with pytest.raises(ValueError):
            input_layer(spec, np.array([0.1, 1.0]))


class TestForwardGeneral:
    def test_matches_integrator_exactly(self):
        rng = np.random.default_rng(21)
        grid = TimeGrid(1.0, 5, 4)
        spec, profile, delays, biases = make_spec(grid, rng)
        rhs = semilinear_rhs(spec.semilinear)
        J = input_layer(spec, np.append(rng.normal(size=3), 1.0))
        drive = DriveSignal.feedforward(input_segment=J, biases=biases)
        dde_out = integrate_general(rhs, drive, profile, delays, grid,
                                    History(initial_value=spec.initial_value))
        net_out = forward_general(rhs, spec, profile, delays, drive=drive)
        assert np.array_equal(dde_out.values, net_out.values)

    def test_hand_unrolled_delay_coupling(self):
        grid = TimeGrid(0.4, 2, 2)
        theta = grid.theta
        delays = DelaySet((2,))
        profile = ModulationProfile.feedforward(np.ones((1, 1, 2)))
        spec = NetworkSpec(grid, np.zeros((2, 2)), [np.zeros((2, 3))],
                           initial_value=1.0)
        drive = DriveSignal.feedforward(input_segment=np.zeros(2))
        out = forward_general(lambda x, z, s: s[0], spec, profile, delays, drive=drive)
        x = out.values
        assert np.all(x[0] == 1.0)
        assert x[1, 0] == x[0, 1] + theta * x[0, 0]
        assert x[1, 1] == x[1, 0] + theta * x[0, 1]

    def test_zero_weights_geometric_decay(self):
        grid = TimeGrid(0.5, 5, 3)
        delays = DelaySet((5,))
        profile = ModulationProfile.feedforward(np.zeros((2, 1, 5)))
        spec = NetworkSpec(grid, np.zeros((5, 2)), [np.zeros((5, 6))] * 2,
                           initial_value=2.0)
        drive = DriveSignal.feedforward(input_segment=np.zeros(5))
        out = forward_general(lambda x, z, s: -x, spec, profile, delays, drive=drive)
        expected = 2.0 * 0.9 ** np.arange(1, 16)
        assert np.allclose(out.values.ravel(), expected, atol=1e-15)


class TestForwardSemilinear:
    def test_matches_integrator(self):
        rng = np.random.default_rng(33)
        grid = TimeGrid(1.0, 6, 3)
        spec, profile, delays, biases = make_spec(grid, rng, alpha=1.4, x0=0.2)
        u = np.append(rng.normal(size=3), 1.0)
        J = spec.input_weights @ u  # preprocessing g defaults to identity
        drive = DriveSignal.feedforward(input_segment=J, biases=biases)
        dde_out = integrate_semilinear(spec.semilinear, drive, profile, delays,
                                       grid, History(initial_value=0.2))
        states, _ = forward_semilinear(spec, u)
        scale = np.maximum(np.abs(dde_out.values), np.abs(states))
        err = np.abs(dde_out.values - states)
        rel = np.where(scale > 1e-8, err / np.where(scale == 0, 1, scale), err)
        assert np.max(rel) <= 1e-12

    def test_zero_weights_driven_by_bias(self):
        # with all couplings zero each node follows the affine recursion
        # x <- q x + gain sin(b)
        grid = TimeGrid(1.0, 3, 2)
        alpha, theta = 2.0, grid.theta
        b = np.array([0.3, -0.7, 1.1])
        hidden = [np.column_stack([np.zeros((3, 3)), b])]
        spec = NetworkSpec(grid, np.zeros((3, 2)), hidden,
                           semilinear=SemilinearParams(alpha=alpha), initial_value=0.5)
        states, _ = forward_semilinear(spec, np.array([0.0, 1.0]))
        q = math.exp(-alpha * theta)
        gain = (1 - q) / alpha
        x = 0.5
        for n in range(3):  # first layer: a = g(W_in u) = 0, sin(0) = 0
            x = q * x
            assert states[0, n] == pytest.approx(x, rel=1e-15)
        for n in range(3):
            x = q * x + gain * math.sin(b[n])
            assert states[1, n] == pytest.approx(x, rel=1e-14)


class TestMatrixForm:
    def test_propagator_entries_n3(self):
        alpha, theta = 1.5, 0.4
        mats = PropagatorMatrices.build(3, alpha, theta)
        q = math.exp(-alpha * theta)
        expected_E = np.array([[1, 0, 0], [q, 1, 0], [q * q, q, 1]])
        assert np.allclose(mats.E, expected_E, rtol=1e-15)
        expected_A = np.array([[0, 0, 0], [q, 0, 0], [0, q, 0]])
        assert np.allclose(mats.A, expected_A, rtol=1e-15)

    def test_inverse_relation(self):
        for N in (1, 3, 16, 64):
            mats = PropagatorMatrices.build(N, 0.8, 0.25)
            residual = (np.eye(N) - mats.A) @ mats.E - np.eye(N)
            assert np.max(np.abs(residual).sum(axis=1)) <= 1e-12

    def test_carry_only_when_f_vanishes(self):
        params = SemilinearParams(alpha=1.0, nonlinearity="sine")
        mats = PropagatorMatrices.build(4, 1.0, 0.5)
        x_prev = np.array([0.1, 0.2, -0.3, 0.7])
        W = np.zeros((4, 5))
        x = hidden_layer_matrix_form(x_prev, W, params, mats)
        q = math.exp(-0.5)
        expected = q ** np.arange(1, 5) * x_prev[-1]
        assert np.allclose(x, expected, rtol=1e-15)

    def test_matches_sequential_recursion(self):
        rng = np.random.default_rng(8)
        for N in (2, 17, 64):
            grid = TimeGrid(1.0, N, 2)
            spec, profile, delays, biases = make_spec(grid, rng, alpha=0.9)
            params = spec.semilinear
            mats = PropagatorMatrices.build(N, params.alpha, grid.theta)
            x_prev = rng.normal(size=N)
            W = spec.hidden_weights[0]
            got = hidden_layer_matrix_form(x_prev, W, params, mats)
            # sequential oracle
            decay, gain = params.step_coefficients(grid.theta)
            f = params.response()
            x, seq = x_prev[-1], np.empty(N)
            fa = f(W @ np.append(x_prev, 1.0))
            for n in range(N):
                x = decay * x + gain * fa[n]
                seq[n] = x
            assert np.max(np.abs(got - seq)) <= 1e-12

    def test_alpha_mismatch_rejected(self):
        mats = PropagatorMatrices.build(3, 1.0, 0.5)
        with pytest.raises(ValueError):
            hidden_layer_matrix_form(np.zeros(3), np.zeros((3, 4)),
                                     SemilinearParams(alpha=2.0), mats)


class TestMapLimit:
    def test_classical_mlp_correspondence(self):
        rng = np.random.default_rng(14)
        grid = TimeGrid(8.0, 4, 3)
        spec, _, _, _ = make_spec(grid, rng, alpha=1.0, nonlinearity="tanh")
        u = np.append(rng.normal(size=3), 1.0)
        states, _ = forward_map_limit(spec, u)
        x = np.tanh(spec.input_weights @ u)
        assert np.allclose(states[0], x, rtol=1e-15)
        for i, W in enumerate(spec.hidden_weights):
            x = np.tanh(W @ np.append(x, 1.0))
            assert np.allclose(states[i + 1], x, rtol=1e-15)

    def test_zero_weights_bias_only(self):
        grid = TimeGrid(4.0, 2, 2)
        alpha = 2.0
        b = np.array([0.4, -0.9])
        hidden = [np.column_stack([np.zeros((2, 2)), b])]
        spec = NetworkSpec(grid, np.zeros((2, 2)), hidden,
                           semilinear=SemilinearParams(alpha=alpha))
        states, _ = forward_map_limit(spec, np.array([0.3, 1.0]))
        assert np.allclose(states[1], np.sin(b) / alpha, rtol=1e-15)

    def test_approaches_semilinear_as_theta_grows(self):
        rng = np.random.default_rng(2)
        u = np.append(rng.normal(size=3), 1.0)
        errors = []
        for theta in (2.0, 8.0):
            grid = TimeGrid(theta * 5, 5, 3)
            spec, _, _, _ = make_spec(grid, np.random.default_rng(77), alpha=1.0)
            exact, _ = forward_semilinear(spec, u)
            limit, _ = forward_map_limit(spec, u)
            errors.append(np.max(np.abs(exact - limit)))
        assert errors[1] < errors[0] * 1e-2


class TestForwardRecurrent:
    def test_zero_weights_decay(self):
        grid = TimeGrid(1.0, 3, 4)
        W = np.zeros((3, 3))
        W_in = np.zeros((3, 2))
        inputs = np.column_stack([np.zeros(4), np.ones(4)])
        out = forward_recurrent(W, W_in, inputs, grid,
                                lambda x, z, s: -x, x0=1.0)
        theta = grid.theta
        expected = (1 - theta) ** np.arange(1, 13)
        assert np.allclose(out.values.ravel(), expected, atol=1e-15)

    def test_matches_integrator_dense_matrix(self):
        rng = np.random.default_rng(55)
        N, K, M = 4, 6, 2
        grid = TimeGrid(1.0, N, K)
        delays = full_delay_set(N)
        W = rng.uniform(-1, 1, (N, N)) / np.sqrt(N)
        W_in = rng.uniform(-1, 1, (N, M + 1))
        inputs = np.column_stack([rng.normal(size=(K, M)), np.ones(K)])
        params = SemilinearParams(alpha=1.2, nonlinearity="tanh")

        net = forward_recurrent(W, W_in, inputs, grid, params, x0=0.3)

        from delayfold.modulation import compile_profile
        profile = compile_profile(W, delays, grid, mode="recurrent")
        z = np.tanh(inputs @ W_in.T)
        drive = DriveSignal.recurrent(z)
        dde_out = integrate_semilinear(params, drive, profile, delays, grid,
                                       History(initial_value=0.3))
        scale = np.maximum(np.abs(dde_out.values), np.abs(net.values))
        err = np.abs(dde_out.values - net.values)
        rel = np.where(scale > 1e-8, err / np.where(scale == 0, 1, scale), err)
        assert np.max(rel) <= 1e-12

    def test_general_dynamics_matches_integrator(self):
        rng = np.random.default_rng(56)
        N, K = 3, 5
        grid = TimeGrid(1.0, N, K)
        delays = DelaySet((2, 3, 4))
        mask = legal_positions(delays, N)
        table = np.where(mask, rng.uniform(-0.6, 0.6, mask.shape), 0.0)
        profile = ModulationProfile.recurrent(table)
        W = assemble_weight_matrix(profile, delays, grid, 2)
        W_in = rng.uniform(-1, 1, (N, 3))
        inputs = np.column_stack([rng.normal(size=(K, 2)), np.ones(K)])
        rhs = semilinear_rhs(SemilinearParams(alpha=1.0, nonlinearity="sine"))

        net = forward_recurrent(W, W_in, inputs, grid, rhs, delays=delays, x0=0.1)
        z = np.tanh(inputs @ W_in.T)
        dde_out = integrate_general(rhs, DriveSignal.recurrent(z), profile, delays,
                                    grid, History(initial_value=0.1))
        assert np.max(np.abs(net.values - dde_out.values)) <= 1e-13

    def test_unrealizable_matrix_rejected(self):
        grid = TimeGrid(1.0, 2, 3)
        W = np.array([[0.5, 0.0], [0.0, 0.0]])
        inputs = np.column_stack([np.zeros(3), np.ones(3)])
        with pytest.raises(UnrealizableWeightsError):
            forward_recurrent(W, np.zeros((2, 2)), inputs, grid,
                              SemilinearParams(alpha=1.0), delays=DelaySet((1,)))

    def test_single_delay_ring_is_diagonal(self):
        # the classic time-delay reservoir: one delay of exactly one clock
        # cycle couples each node to its own image one step earlier
        rng = np.random.default_rng(4)
        N, K = 5, 4
        grid = TimeGrid(1.0, N, K)
        delays = DelaySet((N,))
        table = rng.uniform(0.2, 0.9, (1, N))
        profile = ModulationProfile.recurrent(table)
        W = assemble_weight_matrix(profile, delays, grid, 2)
        assert np.array_equal(W, np.diag(table[0]))

        W_in = rng.normal(size=(N, 2))
        inputs = np.column_stack([rng.normal(size=K), np.ones(K)])
        params = SemilinearParams(alpha=1.0)
        net = forward_recurrent(W, W_in, inputs, grid, params, delays=delays, x0=0.2)
        dde_out = integrate_semilinear(
            params, DriveSignal.recurrent(np.tanh(inputs @ W_in.T)),
            profile, delays, grid, History(initial_value=0.2),
        )
        assert np.max(np.abs(net.values - dde_out.values)) <= 1e-13

    def test_first_step_ignores_delays(self):
        # two different W give the same first step
        rng = np.random.default_rng(58)
        N, K = 3, 2
        grid = TimeGrid(1.0, N, K)
        inputs = np.column_stack([rng.normal(size=(K, 1)), np.ones(K)])
        W_in = rng.normal(size=(N, 2))
        params = SemilinearParams(alpha=1.0)
        a = forward_recurrent(np.zeros((N, N)), W_in, inputs, grid, params, x0=0.4)
        b = forward_recurrent(rng.normal(size=(N, N)), W_in, inputs, grid, params, x0=0.4)
        assert np.array_equal(a.values[0], b.values[0])
        assert not np.array_equal(a.values[1], b.values[1])


class TestOutputLayer:
    def test_zero_weights(self):
        assert np.array_equal(output_layer(np.ones(3), np.zeros((2, 4))), np.zeros(2))

    def test_softmax_normalization(self):
        rng = np.random.default_rng(6)
        y = output_layer(rng.normal(size=5), rng.normal(size=(4, 6)), "softmax")
        assert np.all(y > 0)
        assert abs(np.sum(y) - 1.0) <= 1e-12

    def test_single_entry_pickoff(self):
        c = 2.5
        x = np.array([0.1, 0.2, 0.7])
        W_out = np.array([[0.0, 0.0, c, 0.0]])
        assert output_layer(x, W_out)[0] == c * 0.7

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            output_layer(np.ones(3), np.zeros((2, 3)))


class TestSparsityPatternSharing:
    def test_layers_share_zero_pattern(self):
        rng = np.random.default_rng(77)
        grid = TimeGrid(1.0, 6, 4)
        delays = DelaySet((2, 6, 9))
        mask = legal_positions(delays, 6)
        tables = [
            np.where(mask, rng.uniform(0.1, 1.0, mask.shape), 0.0)
            for _ in range(3)
        ]
        profile = ModulationProfile.feedforward(np.stack(tables))
        patterns = [
            assemble_weight_matrix(profile, delays, grid, seg)[:, :6] != 0.0
            for seg in (2, 3, 4)
        ]
        assert np.array_equal(patterns[0], patterns[1])
        assert np.array_equal(patterns[1], patterns[2])


def test_network_spec_validation():
    grid = TimeGrid(1.0, 3, 2)
    with pytest.raises(ValueError):
        NetworkSpec(grid, np.zeros((2, 4)), [np.zeros((3, 4))])  # wrong N
    with pytest.raises(ValueError):
        NetworkSpec(grid, np.zeros((3, 4)), [])  # missing hidden matrix
    with pytest.raises(ValueError):
        NetworkSpec(grid, np.zeros((3, 4)), [np.zeros((3, 3))])  # no bias column
    with pytest.raises(ValueError):
        NetworkSpec(grid, np.zeros((3, 4)), [np.zeros((3, 4))],
                    output_weights=np.zeros((2, 3)))
