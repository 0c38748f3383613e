import numpy as np
import pytest

from fcpflow import diffcore as dc
from fcpflow.errors import ContractError, DimensionError, DomainError, EvaluationError


def test_matmul_examples():
    a = dc.constant(np.eye(2))
    b = dc.constant([[1, 2], [3, 4]])
    np.testing.assert_array_equal((a @ b).value, [[1, 2], [3, 4]])
    np.testing.assert_array_equal(dc.matmul([[1, 2]], [[3], [4]]).value, [[11]])


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        dc.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_gradient_matches_fd(rng):
    A = dc.parameter(rng.standard_normal((3, 3)))
    B = dc.parameter(rng.standard_normal((3, 3)))
    assert dc.finite_diff_check(lambda: dc.reduce_sum(A @ B), [A, B]) <= 1e-6


def test_elementwise_examples():
    assert dc.exp([[0.0]]).value[0, 0] == 1.0
    assert dc.arctan([[1.0]]).value[0, 0] == pytest.approx(np.pi / 4, abs=1e-15)
    x = dc.parameter([[2.0]])
    dc.backward(dc.log(x))
    assert x.grad[0, 0] == pytest.approx(0.5, abs=1e-8)


def test_domain_errors():
    with pytest.raises(DomainError):
        dc.log([[0.0, 1.0]])
    with pytest.raises(DomainError):
        dc.div([[1.0]], [[0.0]])
    with pytest.raises(DomainError):
        dc.sqrt([[-1.0]])
    with pytest.raises(DimensionError):
        dc.add(np.ones((2, 3)), np.ones((3, 2)))


def test_split_and_interleave():
    v = dc.constant([[1.0, 2.0, 3.0, 4.0]])
    x1, x2 = dc.split_even_odd(v)
    np.testing.assert_array_equal(x1.value, [[1, 3]])
    np.testing.assert_array_equal(x2.value, [[2, 4]])
    w = dc.constant(np.arange(10.0).reshape(2, 5))
    e, o = dc.split_even_odd(w)
    assert e.shape == (2, 3) and o.shape == (2, 2)
    np.testing.assert_array_equal(e.value[0], [0, 2, 4])
    with pytest.raises(DimensionError):
        dc.split_even_odd(np.ones((3, 1)))


@pytest.mark.parametrize("cols", [2, 3, 4, 7, 24])
def test_interleave_inverts_split(rng, cols):
    v = rng.standard_normal((4, cols))
    e, o = dc.split_even_odd(v)
    np.testing.assert_array_equal(dc.interleave_cols(e, o).value, v)


def test_backward_examples():
    x = dc.parameter(np.ones((2, 3)))
    dc.backward(dc.reduce_sum(2.0 * x))
    np.testing.assert_array_equal(x.grad, np.full((2, 3), 2.0))

    y = dc.parameter(np.ones((2, 2)))
    dc.zero_grad([y])
    dc.backward(dc.constant([[3.0]]))
    np.testing.assert_array_equal(y.grad, 0.0)


def test_backward_requires_scalar():
    with pytest.raises(ContractError):
        dc.backward(dc.parameter(np.ones((2, 2))))


def test_backward_is_linear(rng):
    # grad of (a f + b g) equals a grad f + b grad g
    x = dc.parameter(rng.standard_normal((3, 4)))

    def f():
        return dc.reduce_sum(dc.tanh(x) * x)

    def g():
        return dc.reduce_mean(dc.exp(dc.scale(x, 0.3)))

    grads = []
    for fn in (f, g, lambda: dc.scale(f(), 2.0) + dc.scale(g(), -3.0)):
        dc.zero_grad([x])
        dc.backward(fn())
        grads.append(x.grad.copy())
    np.testing.assert_allclose(grads[2], 2 * grads[0] - 3 * grads[1], atol=1e-12)


def test_shared_subexpression_accumulates():
    x = dc.parameter([[3.0]])
    y = x * x
    dc.backward(y + y)
    assert x.grad[0, 0] == 12.0


def test_finite_diff_check_examples(rng):
    th = dc.parameter([[3.0]])
    assert dc.finite_diff_check(lambda: dc.square(th), [th]) <= 1e-8
    assert th.grad[0, 0] == pytest.approx(6.0)

    W = dc.parameter(rng.standard_normal((2, 2)))
    assert dc.finite_diff_check(lambda: dc.reduce_sum(dc.exp(W)), [W]) <= 1e-6

    # gradient deliberately halved: detector reports ~0.5
    v = dc.parameter([[0.0]])
    err = dc.finite_diff_check(lambda: dc.exp(v), [v], grads=[np.array([[0.5]])])
    assert err == pytest.approx(0.5, abs=1e-6)


def test_finite_diff_check_nonfinite_objective():
    v = dc.parameter([[1.0]])
    with pytest.raises(EvaluationError):
        dc.finite_diff_check(lambda: float("nan"), [v], grads=[np.zeros((1, 1))])


def _ops(a, b, pos):
    """A scalar reduction exercising one op, keyed by name."""
    return {
        "add": lambda: dc.reduce_sum(dc.add(a, b) * a),
        "sub": lambda: dc.reduce_sum(dc.sub(a, b) * b),
        "mul": lambda: dc.reduce_sum(dc.mul(a, b)),
        "div": lambda: dc.reduce_sum(dc.div(a, pos)),
        "neg": lambda: dc.reduce_sum(dc.neg(a) * b),
        "scale": lambda: dc.reduce_sum(dc.scale(a, 1.7) * a),
        "exp": lambda: dc.reduce_mean(dc.exp(a)),
        "log": lambda: dc.reduce_sum(dc.log(pos)),
        "sqrt": lambda: dc.reduce_sum(dc.sqrt(pos)),
        "square": lambda: dc.reduce_sum(dc.square(a)),
        "arctan": lambda: dc.reduce_sum(dc.arctan(a) * b),
        "tanh": lambda: dc.reduce_sum(dc.tanh(a) * b),
        "transpose": lambda: dc.reduce_sum(dc.transpose(a) @ b),
        "concat": lambda: dc.reduce_sum(dc.square(dc.concat_cols(a, b))),
        "slice": lambda: dc.reduce_sum(dc.square(dc.slice_cols(a, 0, 1))),
        "sum0": lambda: dc.reduce_sum(dc.square(dc.reduce_sum(a, axis=0))),
        "sum1": lambda: dc.reduce_sum(dc.square(dc.reduce_sum(a, axis=1))),
        "mean0": lambda: dc.reduce_sum(dc.square(dc.reduce_mean(a, axis=0))),
        "var0": lambda: dc.reduce_sum(dc.reduce_var(a, axis=0) * dc.reduce_mean(b, axis=0)),
        "var1": lambda: dc.reduce_sum(dc.square(dc.reduce_var(a, axis=1))),
        "var": lambda: dc.reduce_var(a),
        "row_bcast": lambda: dc.reduce_sum(dc.square(a - dc.reduce_mean(b, axis=0))),
        "col_bcast": lambda: dc.reduce_sum(dc.square(a * dc.reduce_sum(b, axis=1))),
    }


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("shape", [(1, 2), (3, 2), (2, 5), (4, 3), (5, 4), (6, 1)])
def test_all_ops_match_finite_differences(seed, shape):
    r = np.random.default_rng(seed)
    a = dc.parameter(r.standard_normal(shape))
    b = dc.parameter(r.standard_normal(shape))
    pos = dc.parameter(r.uniform(0.5, 2.0, shape))
    for name, f in _ops(a, b, pos).items():
        if name == "transpose":
            continue
        if name == "slice" and shape[1] < 1:
            continue
        err = dc.finite_diff_check(f, [a, b, pos])
        assert err <= 1e-6, (name, shape, err)


@pytest.mark.parametrize("n", [2, 3])
def test_transpose_gradient(n):
    r = np.random.default_rng(n)
    a = dc.parameter(r.standard_normal((n, n)))
    b = dc.parameter(r.standard_normal((n, n)))
    assert dc.finite_diff_check(lambda: dc.reduce_sum(dc.transpose(a) @ b), [a, b]) <= 1e-6


def test_gradients_do_not_alias():
    # an upstream gradient array must not be mutated by later accumulation
    x = dc.parameter([[1.0, 2.0]])
    y = x + 0.0
    dc.backward(dc.reduce_sum(y * 2.0 + y))
    np.testing.assert_array_equal(x.grad, [[3.0, 3.0]])
