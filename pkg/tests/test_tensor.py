import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hdgcn.errors import ConfigError, DataError, DimensionError, UsageError
from hdgcn.tensor import (
    Parameter,
    Tape,
    Tensor,
    add,
    apply_activation,
    backward,
    cross_entropy_loss,
    grad_check,
    layer_norm_rows,
    linear_map,
    matmul,
    max_rows,
    mean_rows,
    mul,
    select_rows,
    softmax_rows,
    sum_all,
    sum_rows,
    transpose,
    vstack,
)

from oracles import layer_norm_row, softmax_row

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def matrices(max_rows=5, max_cols=5):
    return st.tuples(st.integers(1, max_rows), st.integers(1, max_cols)).flatmap(
        lambda s: arrays(np.float64, s, elements=finite)
    )


# -- matmul -----------------------------------------------------------------


def test_matmul_identity():
    out = matmul(Tensor(np.eye(2)), Tensor([[1, 2], [3, 4]]))
    np.testing.assert_array_equal(out.values, [[1, 2], [3, 4]])


def test_matmul_selector_row():
    assert matmul(Tensor([[1, 0]]), Tensor([[2], [5]])).values.tolist() == [[2.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient(rng):
    a = Parameter("a", rng.normal(size=(3, 4)))
    b = Parameter("b", rng.normal(size=(4, 2)))
    c = Tensor(rng.normal(size=(3, 2)))
    report = grad_check(lambda: sum_all(mul(matmul(a, b), c)), [a, b], tol=1e-6)
    assert report.passed, report.max_rel_error
    assert report.worst < 1e-7


# -- softmax ----------------------------------------------------------------


def test_softmax_examples():
    np.testing.assert_allclose(softmax_rows(Tensor([[0.0, 0.0]])).values, [[0.5, 0.5]])
    np.testing.assert_allclose(softmax_rows(Tensor([[math.log(3), 0.0]])).values, [[0.75, 0.25]], atol=1e-15)
    big = softmax_rows(Tensor([[1000.0, 0.0]])).values
    assert np.all(np.isfinite(big))
    np.testing.assert_allclose(big, [[1.0, 0.0]], atol=1e-300)


def test_softmax_rejects_nonpositive_scale():
    with pytest.raises(ConfigError):
        softmax_rows(Tensor([[1.0]]), 0.0)


@given(matrices(), st.floats(0.1, 10))
def test_softmax_rows_sum_to_one(x, scale):
    p = softmax_rows(Tensor(x), scale).values
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(p >= 0)


@given(matrices(3, 4), st.floats(-100, 100))
def test_softmax_shift_invariant(x, c):
    np.testing.assert_allclose(softmax_rows(Tensor(x)).values, softmax_rows(Tensor(x + c)).values, atol=1e-12)


def test_softmax_matches_scalar_oracle(rng):
    x = rng.normal(size=(4, 6)) * 3
    got = softmax_rows(Tensor(x), 2.5).values
    for i in range(4):
        np.testing.assert_allclose(got[i], softmax_row(list(x[i]), 2.5), rtol=1e-13)


# -- layer norm -------------------------------------------------------------


def _ln(x, eps=1e-5):
    d = np.shape(x)[1]
    return layer_norm_rows(Tensor(x), Tensor(np.ones((1, d))), Tensor(np.zeros((1, d))), eps).values


def test_layer_norm_examples():
    np.testing.assert_array_equal(_ln([[5.0, 5.0, 5.0]]), [[0.0, 0.0, 0.0]])
    np.testing.assert_allclose(_ln([[1.0, -1.0]], eps=1e-15), [[1.0, -1.0]], atol=1e-12)
    np.testing.assert_allclose(_ln([[1.0, 2.0, 3.0]]), [[-1.2247357, 0.0, 1.2247357]], atol=1e-6)


def test_layer_norm_constant_row_maps_to_bias():
    out = layer_norm_rows(Tensor([[7.0, 7.0]]), Tensor([[2.0, 3.0]]), Tensor([[0.5, -1.0]])).values
    np.testing.assert_array_equal(out, [[0.5, -1.0]])


def test_layer_norm_checks_shapes():
    with pytest.raises(DimensionError):
        layer_norm_rows(Tensor(np.ones((2, 3))), Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 2))))


@given(matrices(4, 6).filter(lambda x: x.shape[1] > 1 and np.all(x.std(axis=1) > 1e-2)))
def test_layer_norm_standardizes(x):
    out = _ln(x)
    assert np.all(np.abs(out.mean(axis=1)) < 1e-9)
    var = x.var(axis=1)
    np.testing.assert_allclose(out.var(axis=1), var / (var + 1e-5), rtol=1e-9)


def test_layer_norm_matches_oracle_and_gradient(rng):
    x = Parameter("x", rng.normal(size=(3, 5)))
    g = Parameter("g", rng.normal(size=(1, 5)))
    b = Parameter("b", rng.normal(size=(1, 5)))
    out = layer_norm_rows(x, g, b).values
    for i in range(3):
        np.testing.assert_allclose(out[i], layer_norm_row(list(x.values[i]), g.values[0], b.values[0], 1e-5), rtol=1e-12)
    w = Tensor(rng.normal(size=(3, 5)))
    assert grad_check(lambda: sum_all(mul(layer_norm_rows(x, g, b), w)), [x, g, b]).passed


# -- activations --------------------------------------------------------------


def test_activation_examples():
    assert apply_activation(Tensor([[-1.0, 2.0]]), "relu").values.tolist() == [[0.0, 2.0]]
    assert apply_activation(Tensor([[0.0]]), "sigmoid").item() == 0.5
    np.testing.assert_allclose(apply_activation(Tensor([[-800.0, 800.0]]), "sigmoid").values, [[0.0, 1.0]])


def test_tanh_gradient_at_zero():
    x = Parameter("x", np.zeros((1, 1)))
    with Tape():
        y = apply_activation(x, "tanh")
    backward(y, [x])
    assert abs(x.grad[0, 0] - 1.0) < 1e-8
    h = 1e-6
    assert abs((math.tanh(h) - math.tanh(-h)) / (2 * h) - x.grad[0, 0]) < 1e-8


def test_unknown_activation():
    with pytest.raises(ConfigError):
        apply_activation(Tensor([[1.0]]), "gelu")


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "identity", "relu"])
def test_activation_gradients(kind, rng):
    x = Parameter("x", rng.normal(size=(3, 4)) + 0.05)  # keep relu away from its kink
    w = Tensor(rng.normal(size=(3, 4)))
    assert grad_check(lambda: sum_all(mul(apply_activation(x, kind), w)), [x]).passed


# -- cross entropy --------------------------------------------------------------


def test_cross_entropy_examples():
    assert cross_entropy_loss(Tensor([[0.0, 0.0]]), [1]).item() == pytest.approx(math.log(2), abs=1e-15)
    assert cross_entropy_loss(Tensor([[1e6, -1e6]]), [0]).item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_label_out_of_range_names_row():
    with pytest.raises(DataError, match="row 1"):
        cross_entropy_loss(Tensor(np.zeros((2, 3))), [0, 3])


def test_cross_entropy_gradient(rng):
    logits = Parameter("z", rng.normal(size=(4, 3)))
    y = [0, 2, 1, 2]
    assert grad_check(lambda: cross_entropy_loss(logits, y), [logits]).worst < 1e-6


@given(matrices(4, 4), st.data())
def test_cross_entropy_nonnegative(x, data):
    y = data.draw(st.lists(st.integers(0, x.shape[1] - 1), min_size=x.shape[0], max_size=x.shape[0]))
    assert cross_entropy_loss(Tensor(x), y).item() >= 0.0


# -- tape behaviour -----------------------------------------------------------


def test_backward_of_sum_gives_ones():
    w = Parameter("w", np.arange(4.0).reshape(2, 2))
    with Tape():
        loss = sum_all(w)
    backward(loss, [w])
    np.testing.assert_array_equal(w.grad, np.ones((2, 2)))


def test_unreachable_parameter_gets_zero_grad():
    w = Parameter("w", np.ones((2, 2)))
    p = Parameter("p", np.ones((3, 1)))
    with Tape():
        loss = sum_all(w)
    backward(loss, [w, p])
    np.testing.assert_array_equal(p.grad, np.zeros((3, 1)))


def test_backward_needs_scalar():
    w = Parameter("w", np.ones((2, 2)))
    with Tape():
        y = add(w, w)
    with pytest.raises(UsageError):
        backward(y)


def test_nested_tapes_rejected():
    with Tape():
        with pytest.raises(UsageError):
            with Tape():
                pass


def test_no_recording_without_tape_or_grad():
    w = Parameter("w", np.ones((2, 2)))
    assert matmul(w, w).tape_id is None
    with Tape() as tape:
        matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))
        assert tape.nodes == []
        matmul(w, w)
        assert len(tape.nodes) == 1


def test_tape_is_topologically_ordered(rng):
    w = Parameter("w", rng.normal(size=(3, 3)))
    with Tape() as tape:
        loss = sum_all(softmax_rows(matmul(matmul(w, w), w)))
    position = {id(node.output): i for i, node in enumerate(tape.nodes)}
    for i, node in enumerate(tape.nodes):
        for inp in node.inputs:
            assert position.get(id(inp), -1) < i
    assert tape.leaves() == [w]
    assert loss.tape_id == len(tape.nodes) - 1


def test_gradients_accumulate_over_fanout():
    w = Parameter("w", [[3.0]])
    with Tape():
        loss = sum_all(mul(w, w))  # d/dw w^2 = 2w
    backward(loss, [w])
    assert w.grad[0, 0] == 6.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_values_raise():
    with pytest.raises(FloatingPointError):
        mul(Tensor([[1e200]]), Tensor([[1e200]]))


def test_max_rows_gradient_goes_to_first_argmax():
    x = Parameter("x", [[1.0, 5.0], [5.0, 2.0], [5.0, 5.0]])
    with Tape():
        loss = sum_all(max_rows(x))
    backward(loss, [x])
    np.testing.assert_array_equal(x.grad, [[0, 1], [1, 0], [0, 0]])


def test_structural_ops_gradients(rng):
    a = Parameter("a", rng.normal(size=(3, 2)))
    b = Parameter("b", rng.normal(size=(2, 2)))
    c = Parameter("c", rng.normal(size=(1, 2)))
    w = Tensor(rng.normal(size=(3, 2)))

    def f():
        stacked = vstack([a, b])  # 5 x 2
        picked = select_rows(stacked, [4, 0, 0])  # repeated index accumulates
        mixed = add(mul(picked, c), mean_rows(stacked))
        return sum_all(matmul(sum_rows(mixed), transpose(sum_rows(w))))

    assert grad_check(f, [a, b, c]).passed


def test_grad_check_flags_a_wrong_backward_rule(rng):
    x = Parameter("x", rng.normal(size=(2, 2)))
    bad = lambda: sum_all(linear_map(lambda v: 2 * v, lambda g: 3 * g, x))  # noqa: E731
    report = grad_check(bad, [x])
    assert not report.passed
    assert report.worst > 0.3


def test_grad_check_single_matmul_is_tight(rng):
    w = Parameter("w", rng.normal(size=(4, 3)))
    x = Tensor(rng.normal(size=(2, 4)))
    assert grad_check(lambda: sum_all(matmul(x, w)), [w]).worst < 1e-7
