import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from aisimpute.numeric import (NonFiniteError, ShapeError, Tape, Tensor, grad_check, make_node,
                               merge_grads, ops, relative_error, rng_stream)


def _weighted(t, w):
    # every output component carries a distinct weight; grad_check sums the
    # components after differencing each one
    return ops.mul(t, w)


def _away_from(x, points, gap=0.05):
    for p in points:
        x = np.where(np.abs(x - p) < gap, p + gap * np.sign(x - p + 1e-300), x)
    return x


UNARY = {
    "tanh": (ops.tanh, lambda r: r.standard_normal((3, 4))),
    "sigmoid": (ops.sigmoid, lambda r: r.standard_normal((3, 4))),
    "relu": (ops.relu, lambda r: _away_from(r.standard_normal((3, 4)), [0.0])),
    "silu": (ops.silu, lambda r: r.standard_normal((3, 4))),
    "softplus": (ops.softplus, lambda r: 3 * r.standard_normal((3, 4))),
    "exp": (ops.exp, lambda r: r.standard_normal((3, 4))),
    "log": (ops.log, lambda r: 0.2 + np.abs(r.standard_normal((3, 4)))),
    "sqrt": (ops.sqrt, lambda r: 0.2 + np.abs(r.standard_normal((3, 4)))),
    "sin": (ops.sin, lambda r: 3 * r.standard_normal((3, 4))),
    "cos": (ops.cos, lambda r: 3 * r.standard_normal((3, 4))),
    "asin": (ops.asin, lambda r: 0.8 * np.tanh(r.standard_normal((3, 4)))),
    "softmax": (lambda a: ops.softmax(a, axis=-1), lambda r: r.standard_normal((3, 4))),
    "l2norm": (lambda a: ops.l2norm(a, axis=-1), lambda r: r.standard_normal((3, 4))),
    "sum": (lambda a: ops.sum(a, axis=0), lambda r: r.standard_normal((3, 4))),
    "mean": (lambda a: ops.mean(a, axis=1, keepdims=True), lambda r: r.standard_normal((3, 4))),
    "slice": (lambda a: ops.slice_axis(a, 1, 3, axis=1), lambda r: r.standard_normal((3, 4))),
    "getitem": (lambda a: a[np.array([2, 0, 2])], lambda r: r.standard_normal((3, 4))),
    "transpose": (lambda a: ops.transpose(a), lambda r: r.standard_normal((3, 4))),
    "reshape": (lambda a: ops.reshape(a, (4, 3)), lambda r: r.standard_normal((3, 4))),
    "power": (lambda a: ops.power(a, 3.0), lambda r: r.standard_normal((3, 4))),
    "clip": (lambda a: ops.clip(a, -0.5, 0.5), lambda r: _away_from(r.standard_normal((3, 4)), [-0.5, 0.5])),
}

BINARY = {
    "add": (ops.add, lambda r: (r.standard_normal((3, 4)), r.standard_normal((4,)))),
    "sub": (ops.sub, lambda r: (r.standard_normal((3, 4)), r.standard_normal((3, 1)))),
    "mul": (ops.mul, lambda r: (r.standard_normal((3, 4)), r.standard_normal((3, 4)))),
    "div": (ops.div, lambda r: (r.standard_normal((3, 4)), 1.0 + np.abs(r.standard_normal((3, 4))))),
    "matmul": (ops.matmul, lambda r: (r.standard_normal((3, 4)), r.standard_normal((4, 2)))),
    "batched_matmul": (ops.matmul, lambda r: (r.standard_normal((2, 3, 4)), r.standard_normal((4, 5)))),
    "concat": (lambda a, b: ops.concat([a, b], axis=1), lambda r: (r.standard_normal((3, 4)), r.standard_normal((3, 2)))),
    "stack": (lambda a, b: ops.stack([a, b], axis=0), lambda r: (r.standard_normal((3, 4)), r.standard_normal((3, 4)))),
    "atan2": (ops.atan2, lambda r: (r.standard_normal((3, 4)), 0.3 + np.abs(r.standard_normal((3, 4))) * np.sign(r.standard_normal((3, 4))))),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_gradients(name):
    fn, gen = UNARY[name]
    for point in range(10):
        r = np.random.default_rng(100 * point + len(name))
        x = gen(r)
        w = r.standard_normal(np.shape(fn(Tensor(x)).data))
        res = grad_check(lambda p: _weighted(fn(p["x"]), w), {"x": x}, eps=1e-6)
        assert res.max_rel_error < 1e-6, (name, point, res.max_rel_error, res.worst)


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_primitive_gradients(name):
    fn, gen = BINARY[name]
    for point in range(10):
        r = np.random.default_rng(100 * point + len(name))
        a, b = gen(r)
        w = r.standard_normal(np.shape(fn(Tensor(a), Tensor(b)).data))
        res = grad_check(lambda p: _weighted(fn(p["a"], p["b"]), w), {"a": a, "b": b}, eps=1e-6)
        assert res.max_rel_error < 1e-6, (name, point, res.max_rel_error, res.worst)


def test_where_gradient():
    r = np.random.default_rng(0)
    cond = r.random((3, 4)) < 0.5
    a, b, w = r.standard_normal((3, 4)), r.standard_normal((3, 4)), r.standard_normal((3, 4))
    res = grad_check(lambda p: _weighted(ops.where(cond, p["a"], p["b"]), w), {"a": a, "b": b}, eps=1e-6)
    assert res.max_rel_error < 1e-6


def test_forward_examples():
    assert ops.tanh(Tensor(0.0)).item() == 0.0
    assert_allclose(ops.softmax(Tensor(np.zeros(3))).data, np.full(3, 1 / 3), rtol=0, atol=1e-15)
    tape = Tape()
    x = tape.watch(0.0, "x")
    assert tape.backward(ops.tanh(x))["x"] == 1.0
    tape = Tape()
    x = tape.watch(0.0, "x")
    assert tape.backward(ops.softplus(x))["x"] == 0.5


def test_quadratic_check_is_exact():
    res = grad_check(lambda p: ops.sum(p["p"] * p["p"]), {"p": np.array([1.0, 2.0])})
    assert res.max_rel_error < 1e-8
    assert_array_equal(res.tape_grads["p"], [2.0, 4.0])


def test_wrong_backward_is_caught():
    def bad_sin(a):
        return make_node(np.sin(a.data), (a,), lambda g: (g * np.sin(a.data),))  # should be cos

    x = np.random.default_rng(1).normal(size=5)
    res = grad_check(lambda p: ops.sum(bad_sin(p["x"])), {"x": x})
    assert res.max_rel_error > 1e-1


def test_gradcheck_sampling_and_nonfinite():
    params = {"a": np.arange(10.0), "b": np.ones((3, 3))}
    res = grad_check(lambda p: ops.sum(p["a"] * p["a"]) + ops.sum(ops.exp(p["b"])), params, n_coords=5, seed=3)
    assert res.n_checked == 5 and res.max_rel_error < 1e-8
    with pytest.raises(NonFiniteError), np.errstate(invalid="ignore"):
        grad_check(lambda p: ops.sum(ops.log(p["x"])), {"x": np.array([-1.0])})


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(1e-12, 0.0) == 1e-12 / 1e-8


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(2, 5\)"):
        ops.matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((2, 5))))
    with pytest.raises(ShapeError, match=r"\(3,\).*\(4,\)"):
        ops.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ValueError, match="origin"):
        ops.atan2(Tensor(0.0), Tensor(0.0))


def test_backward_visits_each_node_once():
    tape = Tape()
    x = tape.watch(np.array([1.5, -0.5]), "x")
    y = ops.tanh(x)
    z = y * y + y  # y reused: gradient accumulates, not recomputed
    g = tape.backward(ops.sum(z))["x"]
    t = np.tanh([1.5, -0.5])
    assert_allclose(g, (2 * t + 1) * (1 - t ** 2), rtol=1e-15)
    with pytest.raises(ShapeError):
        tape.backward(z)


def test_merge_grads():
    out = merge_grads({"a": np.ones(2)}, {"a": np.ones(2), "b": np.zeros(1)})
    assert_array_equal(out["a"], [2, 2]) and "b" in out


def test_forward_bit_deterministic():
    r = np.random.default_rng(0)
    a, b = r.standard_normal((20, 30)), r.standard_normal((30, 10))
    x = ops.softmax(ops.matmul(Tensor(a), Tensor(b))).data
    y = ops.softmax(ops.matmul(Tensor(a), Tensor(b))).data
    assert x.tobytes() == y.tobytes()


def test_rng_determinism_and_independence():
    assert_array_equal(rng_stream(5, "a").uniform(100), rng_stream(5, "a").uniform(100))
    assert_array_equal(rng_stream(5, ("x", 1)).normal(7), rng_stream(5, "x/1").normal(7))
    u1 = rng_stream(5, "a").uniform(10**4)
    u2 = rng_stream(5, "b").uniform(10**4)
    u3 = rng_stream(6, "a").uniform(10**4)
    assert abs(np.corrcoef(u1, u2)[0, 1]) < 0.05
    assert abs(np.corrcoef(u1, u3)[0, 1]) < 0.05
    assert ((0 < u1) & (u1 < 1)).all()


def test_rng_normal_clt_and_transform():
    z = rng_stream(0, "n").normal(10**5)
    assert abs(z.mean()) < 3 / np.sqrt(10**5)
    assert abs(z.std() - 1) < 0.01
    u = rng_stream(1, "bm").uniform(4)
    r = np.sqrt(-2 * np.log(u[[0, 2]]))
    expect = [r[0] * np.cos(2 * np.pi * u[1]), r[0] * np.sin(2 * np.pi * u[1]),
              r[1] * np.cos(2 * np.pi * u[3]), r[1] * np.sin(2 * np.pi * u[3])]
    assert_allclose(rng_stream(1, "bm").normal(4), expect, rtol=1e-15)


def test_rng_permutation():
    p = rng_stream(2, "perm").permutation(50)
    assert sorted(p.tolist()) == list(range(50))
    assert_array_equal(p, rng_stream(2, "perm").permutation(50))
    assert isinstance(rng_stream(0).uniform(), float)
