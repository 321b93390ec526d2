"""Tensor engine: op semantics against brute-force oracles, gradient
checks against central finite differences, and the engine invariants."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cheems import reference
from cheems import tensor as T
from cheems.errors import ContractError, NonFiniteError, ShapeError
from cheems.gradcheck import fd_gradcheck
from cheems.tensor import Tensor


def t64(arr, rg=False):
    return Tensor(np.asarray(arr), dtype=np.float64, requires_grad=rg)


class TestMatmul:
    def test_identity(self):
        a = t64([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(a, t64(np.eye(2)))
        assert np.array_equal(out.data, a.data)

    def test_one_by_one(self):
        assert T.matmul(t64([[2.0]]), t64([[3.0]])).item() == 6.0

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        got = T.matmul(t64(a), t64(b)).data
        want = reference.matmul_loops(a, b)
        assert np.max(np.abs(got - want)) < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(t64(np.zeros((2, 3))), t64(np.zeros((2, 3))))

    def test_batched_against_per_slice(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=(5, 3, 4))
        b = rng.normal(size=(5, 4, 2))
        got = T.matmul(t64(a), t64(b)).data
        for i in range(5):
            assert np.allclose(got[i], reference.matmul_loops(a[i], b[i]), atol=1e-12)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_associativity(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (t64(rng.normal(size=s)) for s in [(3, 4), (4, 5), (5, 2)])
        left = T.matmul(T.matmul(a, b), c).data
        right = T.matmul(a, T.matmul(b, c)).data
        assert np.max(np.abs(left - right)) < 1e-10


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax_lastdim(t64([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_singleton(self):
        assert T.softmax_lastdim(t64([5.0])).data[0] == 1.0

    def test_ln2(self):
        out = T.softmax_lastdim(t64([0.0, np.log(2.0)]))
        assert np.allclose(out.data, [1 / 3, 2 / 3], atol=1e-15)

    def test_empty_lastdim_raises(self):
        with pytest.raises(ShapeError):
            T.softmax_lastdim(t64(np.zeros((2, 0))))

    @given(st.integers(0, 2 ** 32 - 1), st.floats(-50, 50))
    @settings(max_examples=25, deadline=None)
    def test_shift_invariance(self, seed, c):
        rng = np.random.default_rng(seed)
        x = t64(rng.normal(size=(3, 6)))
        s1 = T.softmax_lastdim(x).data
        s2 = T.softmax_lastdim(T.add(x, float(c))).data
        assert np.max(np.abs(s1 - s2)) < 1e-6

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        out = T.softmax_lastdim(t64(rng.normal(size=(4, 9)) * 30)).data
        assert np.allclose(out.sum(-1), 1.0, atol=1e-6)
        assert np.all(out >= 0)


class TestRmsnorm:
    def test_unit_rms(self):
        out = T.rmsnorm(t64([1.0, 1.0, 1.0, 1.0]), t64(np.ones(4)), eps=0.0)
        assert np.allclose(out.data, 1.0, atol=1e-15)

    def test_zero_input(self):
        out = T.rmsnorm(t64([0.0, 0.0]), t64(np.ones(2)), eps=1e-6)
        assert np.array_equal(out.data, [0.0, 0.0])

    def test_hand_computed(self):
        # mean([9, 16]) = 12.5, so y = [3, 4] / sqrt(12.5)
        out = T.rmsnorm(t64([3.0, 4.0]), t64(np.ones(2)), eps=0.0)
        assert np.allclose(out.data, np.array([3.0, 4.0]) / np.sqrt(12.5), atol=1e-12)


class TestBackward:
    def test_sum_gives_ones(self):
        x = t64(np.random.default_rng(0).normal(size=(3, 4)), rg=True)
        T.backward(T.tsum(x))
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_square_sum(self):
        x = t64([1.0, 2.0, 3.0], rg=True)
        T.backward(T.tsum(T.mul(x, x)))
        assert np.allclose(x.grad, [2.0, 4.0, 6.0], atol=1e-15)

    def test_non_scalar_loss_rejected(self):
        x = t64([1.0, 2.0], rg=True)
        with pytest.raises(ContractError):
            T.backward(T.mul(x, x))

    def test_graph_consumed(self):
        x = t64([1.0, 2.0], rg=True)
        loss = T.tsum(T.mul(x, x))
        T.backward(loss)
        x.zero_grad()
        T.backward(loss)  # closures dropped: no second accumulation happens
        assert x.grad is None

    def test_shared_subexpression_accumulates(self):
        x = t64([2.0], rg=True)
        y = T.mul(x, x)
        loss = T.tsum(T.add(y, y))
        T.backward(loss)
        assert np.allclose(x.grad, [8.0])


OPS = {
    "add": lambda i: T.tsum(T.mul(T.add(i["a"], i["b"]), i["c"])),
    "sub": lambda i: T.tsum(T.mul(T.sub(i["a"], i["b"]), i["c"])),
    "mul": lambda i: T.tsum(T.mul(T.mul(i["a"], i["b"]), i["c"])),
    "exp": lambda i: T.tsum(T.mul(T.texp(i["a"]), i["c"])),
    "silu": lambda i: T.tsum(T.mul(T.silu(i["a"]), i["c"])),
    "softplus": lambda i: T.tsum(T.mul(T.softplus(i["a"]), i["c"])),
    "sigmoid": lambda i: T.tsum(T.mul(T.sigmoid(i["a"]), i["c"])),
    "cumsum": lambda i: T.tsum(T.mul(T.cumsum(i["a"], axis=1), i["c"])),
    "softmax": lambda i: T.tsum(T.mul(T.softmax_lastdim(i["a"]), i["c"])),
    "matmul": lambda i: T.tsum(T.mul(T.matmul(i["a"], i["b2"]), i["c2"])),
    "rmsnorm": lambda i: T.tsum(T.mul(T.rmsnorm(i["a"], i["w"], 1e-5), i["c"])),
    "transpose": lambda i: T.tsum(T.mul(T.transpose(i["a"], (1, 0)), i["ct"])),
    "reshape": lambda i: T.tsum(T.mul(T.reshape(i["a"], (12,)), i["cf"])),
    "mean": lambda i: T.tsum(T.mul(T.tmean(i["a"], axis=1, keepdims=True), i["cm"])),
    "narrow": lambda i: T.tsum(T.mul(T.narrow(i["a"], 1, 1, 2), i["cn"])),
    "pow": lambda i: T.tsum(T.mul(T.pow_scalar(T.add(T.mul(i["a"], i["a"]), 0.5), -0.5), i["c"])),
}


@pytest.mark.parametrize("op", sorted(OPS))
def test_gradients_match_finite_differences(op):
    # 20 seeds per op, as the engine contract requires
    for seed in range(20):
        rng = np.random.default_rng(seed * 1000 + hash(op) % 1000)
        inputs = {
            "a": t64(rng.normal(size=(3, 4))),
            "b": t64(rng.normal(size=(3, 4))),
            "c": t64(rng.normal(size=(3, 4))),
            "w": t64(rng.uniform(0.5, 1.5, size=4)),
            "b2": t64(rng.normal(size=(4, 2))),
            "c2": t64(rng.normal(size=(3, 2))),
            "ct": t64(rng.normal(size=(4, 3))),
            "cf": t64(rng.normal(size=12)),
            "cm": t64(rng.normal(size=(3, 1))),
            "cn": t64(rng.normal(size=(3, 2))),
        }
        used = {k: v for k, v in inputs.items()}
        fd_gradcheck(OPS[op], used, rel_tol=1e-4)


def test_embedding_gradient_scatters_rows():
    table = t64(np.random.default_rng(1).normal(size=(5, 3)), rg=True)
    idx = np.array([[0, 2, 2], [4, 0, 2]])
    out = T.embedding(table, idx)
    assert out.shape == (2, 3, 3)
    T.backward(T.tsum(out))
    counts = np.array([2.0, 0.0, 3.0, 0.0, 1.0])
    assert np.array_equal(table.grad, np.tile(counts[:, None], (1, 3)))


def test_cross_entropy_matches_manual():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(2, 4, 7))
    tgt = rng.integers(0, 7, size=(2, 4))
    mask = np.array([[True, False, True, True], [False, True, False, True]])
    loss = T.cross_entropy_with_logits(t64(z), tgt, mask)
    manual = []
    for b in range(2):
        for t in range(4):
            if mask[b, t]:
                lse = np.log(np.exp(z[b, t] - z[b, t].max()).sum()) + z[b, t].max()
                manual.append(lse - z[b, t, tgt[b, t]])
    assert abs(loss.item() - np.mean(manual)) < 1e-12


def test_cross_entropy_gradient():
    rng = np.random.default_rng(6)
    z = t64(rng.normal(size=(2, 3, 5)))
    tgt = rng.integers(0, 5, size=(2, 3))
    mask = rng.random((2, 3)) > 0.3
    fd_gradcheck(lambda i: T.cross_entropy_with_logits(i["z"], tgt, mask), {"z": z})


def test_causal_depthwise_conv_matches_loops():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 6, 3))
    w = rng.normal(size=(3, 4))
    got = T.causal_depthwise_conv(t64(x), t64(w)).data
    want = np.zeros_like(x)
    for b in range(2):
        for t in range(6):
            for c in range(3):
                for j in range(4):
                    ti = t - 3 + j
                    if ti >= 0:
                        want[b, t, c] += x[b, ti, c] * w[c, j]
    assert np.max(np.abs(got - want)) < 1e-12
    cot = t64(rng.normal(size=(2, 6, 3)))
    fd_gradcheck(lambda i: T.tsum(T.mul(T.causal_depthwise_conv(i["x"], i["w"]), cot)),
                 {"x": t64(x), "w": t64(w)})


def test_reshape_transpose_roundtrip_bitwise():
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(3, 4, 5)).astype(np.float32))
    back = T.reshape(T.reshape(x, (60,)), (3, 4, 5))
    assert back.data.tobytes() == x.data.tobytes()
    back = T.transpose(T.transpose(x, (2, 0, 1)), (1, 2, 0))
    assert back.data.tobytes() == x.data.tobytes()


def test_nonfinite_forward_raises():
    with pytest.raises(NonFiniteError):
        T.texp(Tensor(np.array([1e30], dtype=np.float32)))


def test_dtype_mismatch_rejected():
    with pytest.raises(ShapeError):
        T.add(Tensor([1.0], dtype=np.float32), Tensor([1.0], dtype=np.float64))


def test_disallowed_broadcast_rejected():
    with pytest.raises(ShapeError):
        T.add(t64(np.zeros((2, 3))), t64(np.zeros((3, 2, 1))))


def test_expand_and_split_concat():
    x = t64(np.arange(6.0).reshape(2, 3), rg=True)
    e = T.expand(T.reshape(x, (2, 1, 3)), (2, 4, 3))
    assert e.shape == (2, 4, 3)
    parts = T.split(e, 2, axis=1)
    assert len(parts) == 2 and parts[0].shape == (2, 2, 3)
    merged = T.concat(parts, axis=1)
    assert np.array_equal(merged.data, e.data)
    T.backward(T.tsum(merged))
    assert np.array_equal(x.grad, np.full((2, 3), 4.0))
