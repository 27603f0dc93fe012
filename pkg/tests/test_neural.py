"""MLP forward/backward, Adam, plateau scheduler, init and checkpoints."""

import copy

import numpy as np
import pytest

from meshmotion.neural import (
    MLP,
    AdamState,
    PlateauScheduler,
    adam_step,
    backward_batch,
    forward_batch,
    init_mlp,
    load_checkpoint,
    mlp_forward,
    mlp_from_dict,
    mlp_gradient,
    mlp_to_dict,
    parameter_count,
    save_checkpoint,
    scheduler_step,
)

from .oracles import fd_gradient


def _zero_mlp(arch, activation="tanh"):
    net = init_mlp(0, arch, activation=activation)
    for W, b in zip(net.weights, net.biases):
        W[:] = 0.0
        b[:] = 0.0
    return net


class TestForward:
    def test_all_zero_parameters_give_zero(self):
        net = _zero_mlp((3, 4, 2, 2))
        assert np.array_equal(mlp_forward(net, [1.0, -2.0]), [0.0, 0.0])

    def test_last_layer_bias_passes_through(self):
        net = _zero_mlp((3, 4, 2, 2))
        net.biases[-1][:] = [1.0, 2.0]
        for z in ([0.0, 0.0], [3.0, -1.0], [100.0, 7.0]):
            assert np.array_equal(mlp_forward(net, z), [1.0, 2.0])

    def test_two_layer_identity_affine(self):
        net = MLP([np.eye(2)], [np.zeros(2)])
        assert np.array_equal(mlp_forward(net, [3.0, 4.0]), [3.0, 4.0])

    def test_batch_equals_loop(self):
        # Matrix-matrix and matrix-vector kernels may round differently, so
        # batch rows match single evaluations to round-off, not bit-exactly.
        net = init_mlp(3, (4, 8, 3, 2))
        rng = np.random.Generator(np.random.Philox(40))
        Z = rng.standard_normal((6, 3))
        Y, _ = forward_batch(net, Z)
        for i in range(6):
            assert mlp_forward(net, Z[i]) == pytest.approx(Y[i], rel=1e-13, abs=1e-15)

    def test_dimension_mismatch(self):
        net = init_mlp(0, (3, 4, 2, 2))
        with pytest.raises(ValueError, match="expected input"):
            forward_batch(net, np.zeros((1, 5)))

    def test_last_layer_positively_homogeneous(self):
        net = init_mlp(5, (4, 8, 3, 2))
        z = np.array([0.3, -0.4, 1.1])
        base = mlp_forward(net, z)
        alpha = 3.5
        net.weights[-1] *= alpha
        net.biases[-1] *= alpha
        assert np.array_equal(mlp_forward(net, z), alpha * base)


class TestGradient:
    def test_zero_net_sum_loss(self):
        # With all parameters zero every hidden activation is zero, so only
        # the last layer's bias gradient is nonzero (ones from the sum).
        net = _zero_mlp((3, 4, 2, 2))
        value, grads = mlp_gradient(net, [0.7, -0.3],
                                    lambda y: (y.sum(), np.ones_like(y)))
        assert value == 0.0
        assert np.array_equal(grads[-1], np.ones(2))  # b_last
        assert np.array_equal(grads[-2], np.zeros((2, 4)))  # W_last sees zero activations
        for g in grads[:2]:  # first layer feels nothing through zero weights above
            assert not g.any()

    @pytest.mark.parametrize("arch,activation", [
        ((2, 1, 3, 2), "tanh"),
        ((3, 8, 2, 4), "tanh"),
        ((4, 16, 5, 2), "tanh"),
        ((3, 16, 4, 6), "relu"),
        ((4, 8, 3, 2), "relu"),
    ])
    def test_matches_finite_differences(self, arch, activation):
        net = init_mlp(hash(arch) % 1000, arch, activation=activation)
        rng = np.random.Generator(np.random.Philox(41))
        z = rng.standard_normal(arch[2])
        w = rng.standard_normal(arch[3])  # random linear functional as the loss

        value, grads = mlp_gradient(net, z, lambda y: (w @ y, w))

        params = net.parameters()
        for pi, (p, g) in enumerate(zip(params, grads)):
            def f(theta, pi=pi, p=p):
                saved = p.copy()
                p[...] = theta
                out = w @ mlp_forward(net, z)
                p[...] = saved
                return out

            fd = fd_gradient(f, p.copy(), step=1e-6)
            denom = max(1.0, float(np.max(np.abs(fd))))
            assert np.max(np.abs(g - fd)) / denom <= 1e-6, f"parameter {pi}"

    def test_duplicate_evaluation_bit_identical(self):
        net = init_mlp(7, (3, 8, 2, 2))
        z = np.array([0.2, -0.9])
        tail = lambda y: (float(y @ y), 2.0 * y)
        v1, g1 = mlp_gradient(net, z, tail)
        v2, g2 = mlp_gradient(net, z, tail)
        assert v1 == v2
        for a, b in zip(g1, g2):
            assert np.array_equal(a, b)

    def test_nonfinite_reported(self):
        net = init_mlp(0, (3, 4, 2, 2))
        net.weights[0][:] = 1e308
        net.weights[1][:] = 1e308
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(FloatingPointError):
                mlp_gradient(net, [1e308, 1e308],
                             lambda y: (y.sum(), np.ones_like(y)))

    def test_batch_backward_matches_sum_of_rows(self):
        net = init_mlp(11, (3, 6, 2, 2))
        rng = np.random.Generator(np.random.Philox(42))
        Z = rng.standard_normal((5, 2))
        dY = rng.standard_normal((5, 2))
        Y, cache = forward_batch(net, Z)
        grads, _ = backward_batch(net, cache, dY)
        totals = [np.zeros_like(g) for g in grads]
        for i in range(5):
            _, ci = forward_batch(net, Z[i : i + 1])
            gi, _ = backward_batch(net, ci, dY[i : i + 1])
            for t, g in zip(totals, gi):
                t += g
        for t, g in zip(totals, grads):
            assert np.allclose(t, g, atol=1e-12)


class TestAdam:
    def test_single_step_hand_value(self):
        # t=1: m_hat = grad, v_hat = grad^2 -> update = lr * 1 / (1 + eps)
        p = [np.array([0.0])]
        state = AdamState.for_params(p, lr=1e-5)
        adam_step(state, p, [np.array([1.0])])
        expected = -1e-5 * (1.0 / (1.0 + state.eps))
        assert p[0][0] == pytest.approx(expected, rel=1e-12)
        assert state.t == 1

    def test_zero_gradient_keeps_params(self):
        p = [np.array([1.0, -2.0])]
        state = AdamState.for_params(p, lr=0.1)
        adam_step(state, p, [np.zeros(2)])
        assert np.array_equal(p[0], [1.0, -2.0])
        assert state.t == 1

    def test_identical_runs_bit_identical(self):
        def run():
            net = init_mlp(5, (3, 8, 2, 2))
            params = net.parameters()
            state = AdamState.for_params(params, lr=1e-3)
            rng = np.random.Generator(np.random.Philox(50))
            for _ in range(20):
                grads = [rng.standard_normal(p.shape) for p in params]
                adam_step(state, params, grads)
            return [p.copy() for p in params]

        a, b = run(), run()
        for pa, pb in zip(a, b):
            assert np.array_equal(pa, pb)

    def test_sign_flip_mirrors_trajectory(self):
        net = init_mlp(6, (3, 8, 2, 2))
        pos = [p.copy() for p in net.parameters()]
        neg = [-p for p in pos]
        s1 = AdamState.for_params(pos, lr=1e-2)
        s2 = AdamState.for_params(neg, lr=1e-2)
        rng = np.random.Generator(np.random.Philox(51))
        for _ in range(10):
            grads = [rng.standard_normal(p.shape) for p in pos]
            adam_step(s1, pos, grads)
            adam_step(s2, neg, [-g for g in grads])
        for pa, pb in zip(pos, neg):
            assert np.array_equal(pa, -pb)

    def test_shape_mismatch_rejected(self):
        p = [np.zeros(2)]
        state = AdamState.for_params(p, lr=0.1)
        with pytest.raises(ValueError, match="lengths disagree"):
            adam_step(state, p, [np.zeros(2), np.zeros(2)])


class TestPlateauScheduler:
    def test_decreasing_losses_keep_lr(self):
        s = PlateauScheduler(lr=1.0, patience=10)
        for k in range(50):
            s.step(1.0 / (k + 1.0))
        assert s.lr == 1.0

    def test_constant_loss_halves_at_epoch_11(self):
        s = PlateauScheduler(lr=1.0, patience=10)
        lrs = [s.step(5.0) for _ in range(11)]
        assert lrs[:10] == [1.0] * 10
        assert lrs[10] == 0.5  # the halving lands on the 11th step

    def test_two_halvings_across_22_epochs(self):
        s = PlateauScheduler(lr=1.0, patience=10)
        lrs = [s.step(5.0) for _ in range(22)]
        assert lrs[10] == 0.5
        assert lrs[21] == 0.25
        assert sum(1 for a, b in zip(lrs, lrs[1:]) if b != a) == 2

    def test_threshold_requires_relative_improvement(self):
        s = PlateauScheduler(lr=1.0, patience=2, threshold=1e-4)
        s.step(1.0)
        s.step(1.0 - 1e-6)  # below the relative threshold: still a bad epoch
        assert s.num_bad == 1
        s.step(0.9)  # clear improvement resets
        assert s.num_bad == 0

    def test_min_lr_floor(self):
        s = PlateauScheduler(lr=1.0, patience=1, min_lr=0.4)
        for _ in range(10):
            s.step(1.0)
        assert s.lr == 0.4

    def test_module_level_helper(self):
        s = PlateauScheduler(lr=2.0, patience=1)
        assert scheduler_step(s, 1.0) == 2.0


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_mlp(0, (4, 16, 3, 2))
        b = init_mlp(0, (4, 16, 3, 2))
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_different_seeds_differ(self):
        a = init_mlp(0, (4, 16, 3, 2))
        b = init_mlp(1, (4, 16, 3, 2))
        assert any(not np.array_equal(wa, wb) for wa, wb in zip(a.weights, b.weights))

    def test_parameter_count_closed_form(self):
        arch = (7, 512, 412, 32)
        net = init_mlp(0, arch)
        assert net.num_parameters() == parameter_count(arch)

    def test_parameter_count_small_hand_case(self):
        # (L=3, w=4, in=2, out=2): W2 4x2 + b2 4 + W3 2x4 + b3 2 = 22
        assert parameter_count((3, 4, 2, 2)) == 22

    def test_depth_two_is_single_affine(self):
        net = init_mlp(0, (2, 99, 3, 2))  # width unused at L=2
        assert len(net.weights) == 1
        assert net.weights[0].shape == (2, 3)

    def test_invalid_arch(self):
        with pytest.raises(ValueError, match="depth"):
            init_mlp(0, (1, 4, 2, 2))
        with pytest.raises(ValueError, match="positive"):
            init_mlp(0, (3, 0, 2, 2))

    def test_biases_start_zero(self):
        net = init_mlp(3, (4, 8, 2, 2))
        for b in net.biases:
            assert not b.any()


class TestCheckpoints:
    def test_round_trip_bit_exact(self, tmp_path):
        net = init_mlp(9, (4, 8, 3, 2), activation="relu")
        path = tmp_path / "net.json"
        save_checkpoint(net, path)
        again = load_checkpoint(path)
        assert again.activation == "relu"
        assert again.seed == 9
        for wa, wb in zip(net.weights, again.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(net.biases, again.biases):
            assert np.array_equal(ba, bb)

    def test_dict_round_trip_preserves_eval(self):
        net = init_mlp(2, (3, 8, 2, 2))
        again = mlp_from_dict(copy.deepcopy(mlp_to_dict(net)))
        z = np.array([0.4, -1.2])
        assert np.array_equal(mlp_forward(net, z), mlp_forward(again, z))
