import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from teqpinn import embeddings as em
from teqpinn import exprgraph as eg
from teqpinn import qmodel as qm

x, t = eg.var("x"), eg.var("t")
BOUNDS = ((-1.0, 1.0), (0.0, 1.0))


def bind_random(params, rng, scale=1.0):
    return {p.payload: float(v) for p, v in zip(params, rng.uniform(-scale, scale, len(params)))}


def fd2(node, bind, name, h=1e-4):
    hi, lo = dict(bind), dict(bind)
    hi[name] += h
    lo[name] -= h
    return (eg.evaluate(node, hi) - 2 * eg.evaluate(node, bind) + eg.evaluate(node, lo)) / h**2


def fd1(node, bind, name, h=1e-6):
    hi, lo = dict(bind), dict(bind)
    hi[name] += h
    lo[name] -= h
    return (eg.evaluate(node, hi) - eg.evaluate(node, lo)) / (2 * h)


class TestAffine:
    def test_endpoints(self):
        s = em.AffineScaler(BOUNDS)
        lo = [eg.evaluate(n) for n in s.forward([eg.const(-1.0), eg.const(0.0)])]
        mid = [eg.evaluate(n) for n in s.forward([eg.const(0.0), eg.const(0.5)])]
        assert lo == pytest.approx([-math.pi, -math.pi]) and mid == pytest.approx([0.0, 0.0], abs=1e-15)

    def test_invalid(self):
        with pytest.raises(ValueError):
            em.AffineScaler(((1.0, 1.0),))

    def test_direct_cyclic(self):
        s = em.AffineScaler(BOUNDS)
        out = em.direct_forward(s, [x, t], 6)
        scaled = s.forward([x, t])
        assert out == [scaled[0], scaled[1]] * 3

    def test_direct_needs_qubits(self):
        with pytest.raises(ValueError):
            em.direct_forward(em.AffineScaler(BOUNDS), [x, t], 1)


class TestFnn:
    def test_zero_weights(self):
        emb = em.FnnEmbedding(2, 4)
        phis = em.fnn_forward(emb, [x, t])
        bind = {p.payload: 0.0 for p in emb.params} | {"x": 0.3, "t": 0.2}
        assert [eg.evaluate(p, bind) for p in phis] == [0.0] * 4

    def test_degenerate_chain_rule(self):
        emb = em.FnnEmbedding(1, 1, hidden=(1, 1))
        phi = em.fnn_forward(emb, [x])[0]
        bind = {p.payload: (1.0 if ".W" in p.payload else 0.0) for p in emb.params}
        bind["x"] = 0.0
        assert eg.evaluate(eg.differentiate(phi, "x"), bind) == pytest.approx(math.pi, rel=1e-15)
        bind["x"] = 0.4
        assert eg.evaluate(phi, bind) == pytest.approx(math.pi * math.tanh(math.tanh(math.tanh(0.4))), rel=1e-15)

    def test_shape(self):
        emb = em.FnnEmbedding(2, 3)
        assert emb.net.layer_sizes == [2, 10, 10, 3]
        assert len(emb.params) == 2 * 10 + 10 + 10 * 10 + 10 + 10 * 3 + 3
        with pytest.raises(ValueError):
            em.fnn_forward(emb, [x])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=15)
    def test_input_derivatives_match_fd(self, seed):
        rng = np.random.default_rng(seed)
        emb = em.FnnEmbedding(2, 3)
        phis = em.fnn_forward(emb, [x, t])
        bind = bind_random(emb.params, rng) | {"x": rng.uniform(-1, 1), "t": rng.uniform(0, 1)}
        for phi in phis:
            v = eg.evaluate(phi, bind)
            assert -math.pi < v < math.pi
            for name in ("x", "t"):
                d2 = eg.evaluate(eg.differentiate(eg.differentiate(phi, name), name), bind)
                assert abs(d2 - fd2(phi, bind, name)) <= 1e-6 * max(1.0, abs(d2)) + 1e-6


class TestQnn:
    def test_midpoint_zero_theta(self):
        emb = em.QnnEmbedding(qm.CircuitLayout(4, 2), em.AffineScaler(BOUNDS))
        phis = em.qnn_forward(emb, [x, t])
        bind = {p.payload: 0.0 for p in emb.params} | {"x": 0.0, "t": 0.5}
        assert [eg.evaluate(p, bind) for p in phis] == pytest.approx([math.pi] * 4, abs=1e-14)

    @given(st.floats(-1, 1), st.floats(-3, 3))
    @settings(max_examples=30)
    def test_single_qubit_closed_form(self, xv, b):
        emb = em.QnnEmbedding(qm.CircuitLayout(1, 1), em.AffineScaler(((-1.0, 1.0),)))
        phi = em.qnn_forward(emb, [x])[0]
        a = math.pi * xv
        assert eg.evaluate(phi, {"x": xv, "emb.theta.0.0": b}) == pytest.approx(math.pi * math.cos(a + b), abs=1e-13)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=10)
    def test_input_derivatives_match_fd(self, seed):
        rng = np.random.default_rng(seed)
        emb = em.QnnEmbedding(qm.CircuitLayout(3, 2), em.AffineScaler(BOUNDS))
        phis = em.qnn_forward(emb, [x, t])
        bind = bind_random(emb.params, rng, math.pi) | {"x": rng.uniform(-1, 1), "t": rng.uniform(0, 1)}
        for phi in phis:
            assert -math.pi <= eg.evaluate(phi, bind) <= math.pi
            for name in ("x", "t"):
                d1 = eg.evaluate(eg.differentiate(phi, name), bind)
                assert abs(d1 - fd1(phi, bind, name)) <= 1e-5
                d2 = eg.evaluate(eg.differentiate(eg.differentiate(phi, name), name), bind)
                assert abs(d2 - fd2(phi, bind, name)) <= 1e-5 * max(1.0, abs(d2))


class TestInit:
    def test_deterministic(self):
        emb = em.FnnEmbedding(2, 4)
        np.testing.assert_array_equal(em.init_params(emb, 3), em.init_params(emb, 3))

    def test_biases_zero_and_glorot_bounds(self):
        emb = em.FnnEmbedding(2, 4)
        vals = dict(zip([p.payload for p in emb.params], em.init_params(emb, 1)))
        assert all(v == 0.0 for k, v in vals.items() if ".b" in k)
        sizes = emb.net.layer_sizes
        for l, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            lim = math.sqrt(6 / (fi + fo))
            ws = [v for k, v in vals.items() if k.startswith(f"emb.W{l}.")]
            assert len(ws) == fi * fo and all(abs(w) <= lim for w in ws)

    def test_angle_bounds(self):
        layout = qm.CircuitLayout(10, 1000)
        vals = em.init_params(layout, 0)
        assert vals.size == 10**4 and np.all(np.abs(vals) < math.pi / 4)

    def test_unknown_component(self):
        with pytest.raises(TypeError):
            em.init_params(object(), 0)
