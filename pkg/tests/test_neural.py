"""Dense networks: forward pass, backprop against finite differences, Adam, checkpoints."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import check_case, randomize
from lccs_tuner.neural import (AdamState, Mlp, ShapeMismatch, adam_step, backward,
                               forward, load_checkpoint, save_checkpoint, write_npz)

GRAD_TOL = 1e-5
N_RANDOM_NETS = 100


def scalar_adam_reference(p0, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam on one scalar, coded without numpy arrays."""
    p, m, v, trace = p0, 0.0, 0.0, []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (vhat ** 0.5 + eps)
        trace.append(p)
    return trace


class TestForward:
    def test_zero_network_outputs_zero(self):
        net = Mlp([3, 5, 2])
        net.set_params([np.zeros_like(p) for p in net.params])
        assert np.array_equal(forward(net, [1.0, -2.0, 3.0]), np.zeros(2))

    def test_identity_layer(self):
        net = Mlp([3, 3])
        net.set_params([np.eye(3), np.zeros(3)])
        x = np.array([0.5, -4.0, 2.0])
        assert np.array_equal(forward(net, x), x)

    def test_bounded_midpoint(self):
        net = Mlp([2, 4, 2], head="bounded", bounds=([0.0, 0.0], [10.0, 50.0]))
        net.set_params([np.zeros_like(p) for p in net.params])
        assert np.allclose(forward(net, [1.0, 1.0]), [5.0, 25.0])

    def test_relu_hidden(self):
        net = Mlp([1, 1, 1])
        net.set_params([np.array([[1.0]]), np.array([0.0]), np.array([[1.0]]), np.array([0.0])])
        assert forward(net, [-3.0])[0] == 0.0
        assert forward(net, [3.0])[0] == 3.0

    def test_batch_matches_rows(self, rng):
        net = randomize(Mlp([4, 8, 3], rng=rng), rng)
        X = rng.normal(size=(6, 4))
        Y = forward(net, X)
        for x, y in zip(X, Y):
            assert np.allclose(forward(net, x), y, rtol=0, atol=1e-14)

    def test_pure(self, rng):
        net = randomize(Mlp([2, 6, 2], rng=rng), rng)
        before = [p.copy() for p in net.params]
        a = forward(net, [0.3, 0.1])
        b = forward(net, [0.3, 0.1])
        assert np.array_equal(a, b)
        assert all(np.array_equal(p, q) for p, q in zip(before, net.params))

    @pytest.mark.parametrize("x", [np.zeros(3), np.zeros((2, 5)), np.zeros((2, 2, 4))])
    def test_shape_mismatch(self, x):
        with pytest.raises(ShapeMismatch):
            forward(Mlp([4, 2]), x)

    def test_invalid_construction(self):
        with pytest.raises(ShapeMismatch):
            Mlp([3])
        with pytest.raises(ValueError):
            Mlp([2, 2], head="softmax")
        with pytest.raises(ValueError):
            Mlp([2, 2], head="bounded", bounds=([1.0, 0.0], [1.0, 1.0]))

    def test_initialisation_ranges(self):
        net = Mlp([2, 64, 64, 2], rng=np.random.default_rng(1))
        assert np.abs(net.weights[0]).max() <= 1 / np.sqrt(2)
        assert np.abs(net.weights[1]).max() <= 1 / 8
        assert np.abs(net.weights[2]).max() <= 3e-3

    @settings(max_examples=200, deadline=None)
    @given(raw=arrays(np.float64, 3, elements=st.floats(-1e6, 1e6)))
    def test_bounded_head_in_range(self, raw):
        lo, hi = np.array([0.0, -2.0, 5.0]), np.array([10.0, 2.0, 50.0])
        net = Mlp([3, 3], head="bounded", bounds=(lo, hi))
        net.set_params([np.eye(3), np.zeros(3)])
        y = forward(net, raw)
        assert np.all(y >= lo) and np.all(y <= hi)


class TestBackward:
    def test_zero_upstream(self, rng):
        net = randomize(Mlp([3, 5, 2], rng=rng), rng)
        grads, dx = backward(net, rng.normal(size=3), np.zeros(2))
        assert all(not g.any() for g in grads) and not dx.any()

    def test_linear_layer_outer_product(self, rng):
        net = randomize(Mlp([3, 2], rng=rng), rng)
        x, g = rng.normal(size=3), rng.normal(size=2)
        grads, dx = backward(net, x, g)
        assert np.allclose(grads[0], np.outer(x, g))
        assert np.allclose(grads[1], g)
        assert np.allclose(dx, net.weights[0] @ g)

    def test_batch_gradient_is_sum(self, rng):
        net = randomize(Mlp([2, 4, 1], rng=rng), rng)
        X, G = rng.normal(size=(5, 2)), rng.normal(size=(5, 1))
        total, _ = backward(net, X, G)
        parts = [backward(net, x, g)[0] for x, g in zip(X, G)]
        for j, g in enumerate(total):
            assert np.allclose(g, sum(p[j] for p in parts))

    def test_upstream_shape_checked(self):
        with pytest.raises(ShapeMismatch):
            backward(Mlp([2, 3]), np.zeros(2), np.zeros(2))

    def test_random_nets_match_finite_differences(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(N_RANDOM_NETS):
            depth = rng.integers(1, 4)
            sizes = [int(n) for n in rng.integers(1, 17, size=depth + 1)]
            head = "bounded" if rng.random() < 0.5 else "linear"
            net = randomize(Mlp(sizes, head=head, rng=rng), rng)
            x = rng.normal(size=sizes[0])
            up = rng.normal(size=sizes[-1])
            worst = max(worst, check_case(net, x, up, rng))
        assert worst < GRAD_TOL


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = [np.array([1.0, -2.0])]
        adam_step(p, [np.zeros(2)], AdamState(p))
        assert np.array_equal(p[0], [1.0, -2.0])

    @pytest.mark.parametrize("g", [1e-3, 1.0, 1e4])
    def test_first_step_magnitude_is_lr(self, g):
        p = [np.array([0.0])]
        st_ = AdamState(p, lr=1e-4)
        adam_step(p, [np.array([g])], st_)
        assert p[0][0] == pytest.approx(-1e-4, rel=1e-4)
        assert st_.t == 1

    def test_scalar_trace_matches_reference(self):
        grads = [0.7, -0.2, 1.5]
        p = [np.array([2.0])]
        state = AdamState(p, lr=1e-3)
        trace = []
        for g in grads:
            adam_step(p, [np.array([g])], state)
            trace.append(p[0][0])
        assert np.allclose(trace, scalar_adam_reference(2.0, grads), rtol=0, atol=1e-15)

    def test_shape_mismatch(self):
        p = [np.zeros(2)]
        with pytest.raises(ShapeMismatch):
            adam_step(p, [np.zeros(3)], AdamState(p))
        with pytest.raises(ShapeMismatch):
            adam_step(p, [np.zeros(2), np.zeros(2)], AdamState(p))

    def test_seeded_training_traces_identical(self):
        def trace(seed):
            rng = np.random.default_rng(seed)
            net = Mlp([2, 8, 1], rng=rng)
            opt = AdamState(net.params, lr=1e-2)
            for _ in range(20):
                x = rng.normal(size=(4, 2))
                grads, _ = backward(net, x, forward(net, x) - 1.0)
                adam_step(net.params, grads, opt)
            return np.concatenate([p.ravel() for p in net.params])

        assert np.array_equal(trace(5), trace(5))
        assert not np.array_equal(trace(5), trace(6))

    def test_copy_is_independent(self):
        p = [np.zeros(2)]
        s = AdamState(p)
        adam_step(p, [np.ones(2)], s)
        c = s.copy()
        adam_step(p, [np.ones(2)], s)
        assert c.t == 1 and s.t == 2 and not np.array_equal(c.m[0], s.m[0])


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        actor = randomize(Mlp([2, 5, 2], head="bounded", bounds=([0, 0], [10, 50]), rng=rng), rng)
        critic = randomize(Mlp([4, 6, 1], rng=rng), rng)
        opt = AdamState(critic.params)
        adam_step(critic.params, [np.ones_like(p) for p in critic.params], opt)
        gen = np.random.default_rng(77)
        gen.normal(size=3)
        path = tmp_path / "ck.npz"
        save_checkpoint(path, {"actor": actor, "critic": critic}, {"critic": opt}, gen,
                        meta={"episodes": 3})
        nets, opts, gen2, meta = load_checkpoint(path)
        for name, net in (("actor", actor), ("critic", critic)):
            assert nets[name].head == net.head
            assert all(np.array_equal(a, b) for a, b in zip(nets[name].params, net.params))
        assert np.array_equal(nets["actor"].hi, [10, 50])
        assert opts["critic"].t == 1
        assert all(np.array_equal(a, b) for a, b in zip(opts["critic"].v, opt.v))
        assert gen2.normal() == gen.normal()
        assert meta == {"episodes": 3}

    def test_bytes_reproducible(self, tmp_path):
        net = Mlp([2, 3, 1])
        save_checkpoint(tmp_path / "a.npz", {"n": net})
        save_checkpoint(tmp_path / "b.npz", {"n": net})
        assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()

    def test_write_npz_readable(self, tmp_path):
        write_npz(tmp_path / "x.npz", {"a": np.arange(3), "b": np.eye(2)})
        with np.load(tmp_path / "x.npz") as d:
            assert np.array_equal(d["a"], np.arange(3)) and np.array_equal(d["b"], np.eye(2))

    def test_copy_is_deep(self, rng):
        net = Mlp([2, 3, 1], rng=rng)
        c = net.copy()
        c.weights[0][0, 0] += 1.0
        assert net.weights[0][0, 0] != c.weights[0][0, 0]
