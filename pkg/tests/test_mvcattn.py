import tracemalloc

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdgcn.errors import CapabilityError, DimensionError
from hdgcn.mvcattn import (
    AttentionTrace,
    MVCAttnWeights,
    backward_cross_attention,
    effective_dynamic_adjacency,
    forward_cross_attention,
    mv_proj,
    mvc_attention,
    read_matrix_csv,
)
from hdgcn.tensor import Parameter, Tape, Tensor, grad_check, mul, sum_all

from oracles import layer_norm_row, mvc_attention_loop


def weights(d, m, seed=0, **kw):
    return MVCAttnWeights.init(d, m, np.random.default_rng(seed), **kw)


def loop_args(w):
    return (
        [v.values for v in w.votes],
        w.fk.values,
        w.fq.values,
        w.fv.values,
        w.bq.values,
        w.bk.values,
        w.bv.values,
        w.norm_gain.values[0],
        w.norm_bias.values[0],
    )


# -- multi-vote projection ------------------------------------------------------


def test_mv_proj_zero_input_gives_bias():
    w = weights(4, 3)
    w.norm_bias.values[...] = [[0.1, -0.2, 0.3, 0.0]]
    s = mv_proj(Tensor(np.zeros((5, 4))), w).values
    np.testing.assert_array_equal(s, np.tile(w.norm_bias.values, (3, 1)))


def test_mv_proj_single_node_identity_votes(rng):
    w = weights(3, 2)
    for v in w.votes:
        v.values[...] = np.eye(3)
    z = rng.normal(size=(1, 3))
    expect = layer_norm_row(list(z[0]), [1, 1, 1], [0, 0, 0], 1e-5)
    np.testing.assert_allclose(mv_proj(Tensor(z), w).values, [expect, expect], rtol=1e-12)


def test_mv_proj_matches_loop(rng):
    w = weights(5, 2, seed=3)
    z = rng.normal(size=(4, 5))
    pooled = sum(z[v] for v in range(4))
    expect = [layer_norm_row(list(pooled @ v.values), np.ones(5), np.zeros(5), 1e-5) for v in w.votes]
    np.testing.assert_allclose(mv_proj(Tensor(z), w).values, expect, atol=1e-10)


# -- cross attention ------------------------------------------------------------


def test_forward_attention_uniform_when_scores_tie(rng):
    w = weights(4, 2)
    w.fq.values[...] = 0.0
    z = rng.normal(size=(6, 4))
    s_hat, a_f = forward_cross_attention(Tensor(z), mv_proj(Tensor(z), w), w)
    np.testing.assert_allclose(a_f.values, 1 / 6)
    np.testing.assert_allclose(s_hat.values, np.tile(z.mean(axis=0) @ w.fv.values, (2, 1)), atol=1e-13)


def test_forward_attention_single_node(rng):
    w = weights(3, 4)
    z = rng.normal(size=(1, 3))
    s_hat, a_f = forward_cross_attention(Tensor(z), mv_proj(Tensor(z), w), w)
    np.testing.assert_array_equal(a_f.values, np.ones((4, 1)))
    np.testing.assert_allclose(s_hat.values, np.tile(z @ w.fv.values, (4, 1)), atol=1e-14)


def test_backward_attention_single_supernode(rng):
    w = weights(3, 1)
    s_hat = Tensor(rng.normal(size=(1, 3)))
    z_new, a_b = backward_cross_attention(s_hat, Tensor(rng.normal(size=(5, 3))), w)
    np.testing.assert_array_equal(a_b.values, np.ones((5, 1)))
    np.testing.assert_allclose(z_new.values, np.tile(s_hat.values @ w.bv.values, (5, 1)), atol=1e-14)


def test_backward_attention_ties_split_evenly(rng):
    w = weights(3, 2)
    w.bq.values[...] = 0.0
    _, a_b = backward_cross_attention(Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(4, 3))), w)
    np.testing.assert_allclose(a_b.values, 0.5)


@pytest.mark.parametrize("n, m, d", [(5, 2, 4), (7, 3, 6), (1, 1, 2)])
def test_pipeline_matches_loop_oracle(n, m, d, rng):
    w = weights(d, m, seed=n)
    z = rng.normal(size=(n, d))
    out, trace = mvc_attention(Tensor(z), w)
    ref, a_f, a_b = mvc_attention_loop(z, *loop_args(w))
    np.testing.assert_allclose(trace.a_f.values, a_f, atol=1e-10)
    np.testing.assert_allclose(trace.a_b.values, a_b, atol=1e-10)
    np.testing.assert_allclose(out.values, ref, atol=1e-10)
    assert out.shape == (n, d)


def test_trace_replay(rng):
    w = weights(6, 4, seed=9)
    z = rng.normal(size=(11, 6))
    out, tr = mvc_attention(Tensor(z), w)
    replay = tr.a_b.values @ (tr.a_f.values @ z @ w.fv.values) @ w.bv.values
    np.testing.assert_allclose(out.values, replay, atol=1e-12)


def test_width_mismatch():
    with pytest.raises(DimensionError):
        mvc_attention(Tensor(np.ones((3, 5))), weights(4, 2))


def test_distinct_attention_widths(rng):
    w = weights(4, 3, d_c=2, d_a=7)
    out, tr = mvc_attention(Tensor(rng.normal(size=(5, 4))), w)
    assert out.shape == (5, 4) and tr.a_f.shape == (3, 5) and tr.a_b.shape == (5, 3)


# -- properties -------------------------------------------------------------------


@given(st.integers(1, 30), st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**31), st.floats(0.01, 30))
def test_attention_factors_are_row_stochastic(n, m, d, seed, spread):
    rng = np.random.default_rng(seed)
    w = MVCAttnWeights.init(d, m, rng)
    _, tr = mvc_attention(Tensor(spread * rng.normal(size=(n, d))), w)
    for mat in (tr.a_f.values, tr.a_b.values, effective_dynamic_adjacency(tr).values):
        assert np.all(mat >= 0)
        np.testing.assert_allclose(mat.sum(axis=1), 1.0, atol=1e-9)


@given(st.integers(2, 20), st.integers(0, 2**31))
def test_permutation_equivariance(n, seed):
    rng = np.random.default_rng(seed)
    w = MVCAttnWeights.init(4, 3, rng)
    z = rng.normal(size=(n, 4))
    perm = rng.permutation(n)
    out, tr = mvc_attention(Tensor(z), w)
    out_p, tr_p = mvc_attention(Tensor(z[perm]), w)
    np.testing.assert_allclose(out_p.values, out.values[perm], atol=1e-12)
    np.testing.assert_allclose(tr_p.a_b.values, tr.a_b.values[perm], atol=1e-12)
    np.testing.assert_allclose(tr_p.a_f.values, tr.a_f.values[:, perm], atol=1e-12)


def test_dynamic_adjacency_examples(rng):
    n = 5
    uniform = AttentionTrace(1, Tensor(np.full((3, n), 1 / n)), Tensor(np.full((n, 3), 1 / 3)))
    np.testing.assert_allclose(effective_dynamic_adjacency(uniform).values, 1 / n)
    _, tr = mvc_attention(Tensor(rng.normal(size=(n, 4))), weights(4, 1))
    a_d = effective_dynamic_adjacency(tr).values
    assert np.linalg.matrix_rank(a_d) == 1
    np.testing.assert_allclose(a_d, np.tile(a_d[0], (n, 1)))


def test_dynamic_adjacency_guard():
    big = 10_001
    tr = AttentionTrace(1, Tensor(np.full((1, big), 1 / big)), Tensor(np.ones((big, 1))))
    with pytest.raises(CapabilityError):
        effective_dynamic_adjacency(tr)


def test_gradients_of_every_weight_group(rng):
    w = weights(4, 3, seed=5)
    z = Parameter("z", rng.normal(size=(6, 4)))
    probe = Tensor(rng.normal(size=(6, 4)))
    report = grad_check(lambda: sum_all(mul(mvc_attention(z, w)[0], probe)), [z, *w.parameters()], tol=1e-4)
    assert report.passed, report.max_rel_error
    assert len(report.resolved) == len(w.parameters()) + 1


def test_no_quadratic_buffer_on_the_tape(rng):
    n, m, d = 60, 10, 8
    w = weights(d, m)
    z = Parameter("z", rng.normal(size=(n, d)))
    with Tape() as tape:
        mvc_attention(z, w)
    shapes = [node.output.shape for node in tape.nodes]
    assert (n, n) not in shapes
    assert max(r * c for r, c in shapes) <= n * max(m, d)


def test_peak_memory_is_linear_in_nodes(rng):
    n, d = 20_000, 16
    w = weights(d, 10)
    z = Tensor(rng.normal(size=(n, d)))
    tracemalloc.start()
    mvc_attention(z, w)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert peak < 40 * n * d * 8  # a single n x n buffer would be 3.2 GB


def test_trace_export_roundtrip(tmp_path, rng):
    _, tr = mvc_attention(Tensor(rng.normal(size=(4, 3))), weights(3, 2))
    paths = tr.write(tmp_path)
    back = AttentionTrace.from_json(paths[0].read_text(encoding="utf-8"))
    np.testing.assert_array_equal(back.a_f.values, tr.a_f.values)
    np.testing.assert_array_equal(back.a_b.values, tr.a_b.values)
    np.testing.assert_array_equal(read_matrix_csv(paths[1]), tr.a_f.values)
    np.testing.assert_array_equal(read_matrix_csv(paths[2]), tr.a_b.values)
    first = [p.read_bytes() for p in paths]
    tr.write(tmp_path)
    assert [p.read_bytes() for p in paths] == first
