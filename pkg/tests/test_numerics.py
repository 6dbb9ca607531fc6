import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geodecoder import numerics as nx
from geodecoder.numerics import Tensor, Tape, backward


def p64(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def test_sum_gradient_is_ones(rng):
    x = p64(rng, 3, 4)
    with Tape() as tape:
        loss = nx.tsum(x)
    backward(tape, loss)
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_reused_tensor_accumulates(rng):
    x = p64(rng, 5)
    with Tape() as tape:
        loss = nx.tsum(x * x + x)
    backward(tape, loss)
    assert np.allclose(x.grad, 2 * x.data + 1)


def test_backward_requires_scalar(rng):
    x = p64(rng, 2)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ValueError):
        backward(tape, y)


def test_no_recording_outside_tape(rng):
    x = p64(rng, 2)
    y = x * 3.0
    with Tape() as tape:
        pass
    with pytest.raises(ValueError):
        backward(tape, nx.tsum(y))
    assert x.grad is None


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_matches_naive(rng):
    a, b = rng.standard_normal((4, 5)), rng.standard_normal((5, 3))
    assert np.allclose(nx.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), atol=1e-12)
    with pytest.raises(ValueError, match=r"\(4, 5\).*\(4, 3\)"):
        nx.matmul(Tensor(a), Tensor(rng.standard_normal((4, 3))))


def test_matmul_identity(rng):
    a = rng.standard_normal((6, 6))
    eye = np.eye(6)
    assert np.allclose(nx.matmul(Tensor(a), Tensor(eye)).data, a)
    assert np.allclose(nx.matmul(nx.matmul(Tensor(a), Tensor(eye)), Tensor(a)).data,
                       nx.matmul(Tensor(a), nx.matmul(Tensor(eye), Tensor(a))).data)


def test_sum_ab_grad_matches_finite_differences(rng):
    a, b = p64(rng, 3, 4), p64(rng, 4, 2)
    err = nx.grad_check(lambda: nx.tsum(nx.matmul(a, b)), {"a": a, "b": b})
    assert err < 1e-6


def test_quadratic_exact(rng):
    t = p64(rng, 7)
    err = nx.grad_check(lambda: nx.tsum(t * t), [t], h=1e-3)
    assert err < 1e-9


def test_grad_check_requires_float64(rng):
    t = Tensor(rng.standard_normal(3), requires_grad=True, dtype=np.float32)
    with pytest.raises(ValueError):
        nx.grad_check(lambda: nx.tsum(t), [t])


def sq(t):
    return t * t


def row(t, i):
    return nx.reshape(nx.take(t, np.array([i]), axis=0), (t.shape[1],))


OPS = {
    "add_broadcast": lambda a, b, c: nx.tsum(sq(nx.add(a, row(c, 0)))),
    "sub_mul_div": lambda a, b, c: nx.tsum(nx.div(nx.mul(nx.sub(a, c), a), c * c + 2.0)),
    "neg": lambda a, b, c: nx.tsum(nx.neg(a) * a),
    "gelu": lambda a, b, c: nx.tsum(nx.gelu(a) * a),
    "reshape_transpose": lambda a, b, c: nx.tsum(nx.transpose(nx.reshape(a, (5, 3))) * nx.swapaxes(nx.reshape(c, (5, 3)), 0, 1)),
    "concat_take": lambda a, b, c: nx.tsum(sq(nx.take(nx.concat([a, a * 2.0], axis=0), np.array([0, 4, 5, 1, 4]), axis=0))),
    "mean": lambda a, b, c: nx.tsum(nx.mean(a * a, axis=1)),
    "matmul": lambda a, b, c: nx.tsum(sq(nx.matmul(a, b))),
    "linear": lambda a, b, c: nx.tsum(sq(nx.gelu(nx.linear(a, b, nx.reshape(nx.take(row(c, 0), np.arange(4), axis=0), (4,)))))),
    "softmax_masked": lambda a, b, c: nx.tsum(nx.softmax_masked(a, np.tril(np.ones((3, 5), bool)), 2.0) * c),
    "layer_norm": lambda a, b, c: nx.tsum(sq(nx.layer_norm(a, row(c, 0), row(c, 1))) * a),
    "cross_entropy": lambda a, b, c: nx.cross_entropy(a * c, np.array([1, 4, 0]), ignore_index=0),
    "embedding": lambda a, b, c: nx.tsum(sq(nx.embedding(a, np.array([[0, 2], [2, 1]])))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_ops_pass_grad_check(name, rng):
    a, b, c = p64(rng, 3, 5), p64(rng, 5, 4), p64(rng, 3, 5)
    f = OPS[name]
    err = nx.grad_check(lambda: f(a, b, c), {"a": a, "b": b, "c": c})
    assert err < 1e-4, name


def test_dropout_grad_and_determinism(rng):
    a = p64(rng, 4, 6)
    y1 = nx.dropout(a, 0.3, (1, 2, 3)).data
    y2 = nx.dropout(a, 0.3, (1, 2, 3)).data
    assert np.array_equal(y1, y2)
    assert not np.array_equal(y1, nx.dropout(a, 0.3, (1, 2, 4)).data)
    err = nx.grad_check(lambda: nx.tsum(nx.dropout(a, 0.3, (9, 9, 9)) * a), [a])
    assert err < 1e-6
    assert np.array_equal(nx.dropout(a, 0.0, (1, 1, 1)).data, a.data)


def test_softmax_rows_sum_to_one(rng):
    x = Tensor(rng.standard_normal((4, 7, 7)))
    mask = np.tril(np.ones((7, 7), bool))
    p = nx.softmax_masked(x, mask).data
    assert np.allclose(p.sum(-1), 1.0, atol=1e-6)
    assert np.all(p[..., ~mask] == 0)
    bad = mask.copy()
    bad[2] = False
    with pytest.raises(ValueError):
        nx.softmax_masked(x, bad)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(2, 9), st.floats(0.1, 5), st.floats(-3, 3))
def test_layer_norm_affine_recovery(rows, cols, scale, shift):
    rng = np.random.default_rng(rows * 100 + cols)
    x = Tensor(rng.standard_normal((rows, cols)))
    g = Tensor(np.full(cols, scale))
    b = Tensor(np.full(cols, shift))
    base = nx.layer_norm(x, Tensor(np.ones(cols)), Tensor(np.zeros(cols))).data
    assert np.allclose(nx.layer_norm(x, g, b).data, scale * base + shift, atol=1e-9)


def test_cross_entropy_values():
    uniform = Tensor(np.zeros((1, 512)))
    assert float(nx.cross_entropy(uniform, np.array([7])).data) == pytest.approx(np.log(512))
    two = Tensor(np.array([[np.log(3.0), 0.0]]))
    assert float(nx.cross_entropy(two, np.array([0])).data) == pytest.approx(np.log(4 / 3))
    with pytest.raises(ValueError):
        nx.cross_entropy(uniform, np.array([512]))
