import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graphac import tensor as T
from graphac.errors import ContractError, DegenerateScaleError, DimensionError, NonFiniteError


def mat(rows, cols, lo=-2.0, hi=2.0):
    return arrays(np.float64, (rows, cols), elements=st.floats(lo, hi, allow_nan=False, width=64))


# ---------------------------------------------------------------- forward values


def test_matmul_example():
    out = T.matmul([[1, 2], [3, 4]], [[1], [1]])
    np.testing.assert_array_equal(out.data, [[3], [7]])


def test_relu_example():
    np.testing.assert_array_equal(T.relu([[-1, 2]]).data, [[0, 2]])


def test_column_mean_example():
    np.testing.assert_array_equal(T.column_mean([[1, 2], [3, 4]]).data, [[2, 3]])


def test_column_std_is_unbiased():
    np.testing.assert_allclose(T.column_std([[1.0], [3.0]]).data, [[np.sqrt(2.0)]])


def test_column_std_rejects_constant_column():
    with pytest.raises(DegenerateScaleError):
        T.column_std([[1.0, 2.0], [1.0, 3.0]])


def test_column_std_needs_two_rows():
    with pytest.raises(ContractError):
        T.column_std([[1.0, 2.0]])


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(DimensionError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError, match="add"):
        T.add(np.ones((2, 3)), np.ones((3, 2)))


def test_log_of_nonpositive_is_contract_error():
    with pytest.raises(ContractError):
        T.log([[0.0]])


def test_overflow_raises_nonfinite():
    with pytest.raises(NonFiniteError):
        T.exp([[1000.0]])


def test_segment_reduce_small_example():
    # node receiving messages {1, 3}
    msgs = np.array([[1.0], [3.0]])
    seg = T.Segments([0, 0], 1)
    assert T.segment_reduce(msgs, seg, "max").item() == 3.0
    assert T.segment_reduce(msgs, seg, "mean").item() == 2.0
    assert T.segment_reduce(msgs, seg, "sum").item() == 4.0


def test_segment_reduce_empty_segments_are_zero():
    seg = T.Segments([0, 0, 2], 3)
    a = np.array([[-5.0], [-7.0], [-1.0]])
    for kind in ("sum", "mean", "max"):
        out = T.segment_reduce(a, seg, kind).data
        assert out[1, 0] == 0.0
    assert T.segment_reduce(a, seg, "max").data[0, 0] == -5.0


def test_row_slice_variants():
    a = np.arange(12.0).reshape(4, 3)
    np.testing.assert_array_equal(T.row_slice(a, slice(1, 3)).data, a[1:3])
    np.testing.assert_array_equal(T.row_slice(a, [3, 0, 3]).data, a[[3, 0, 3]])
    np.testing.assert_array_equal(T.row_slice(a, T.RowIndex([2, 2], 4)).data, a[[2, 2]])
    with pytest.raises(DimensionError):
        T.row_slice(a, [4])


def test_concat_columns():
    out = T.concat_columns([np.ones((2, 1)), np.zeros((2, 2))])
    np.testing.assert_array_equal(out.data, [[1, 0, 0], [1, 0, 0]])
    with pytest.raises(DimensionError):
        T.concat_columns([np.ones((2, 1)), np.ones((3, 1))])


@given(mat(3, 4), mat(3, 4))
@settings(max_examples=30, deadline=None)
def test_forward_ops_leave_inputs_untouched(a, b):
    a0, b0 = a.copy(), b.copy()
    va, vb = T.parameter(a), T.parameter(b)
    T.backward(T.sum_of_squares(T.add(T.multiply(va, vb), T.relu(T.subtract(va, vb)))))
    np.testing.assert_array_equal(a, a0)
    np.testing.assert_array_equal(b, b0)
    np.testing.assert_array_equal(va.data, a0)


# ---------------------------------------------------------------- backward


def test_bilinear_gradient():
    rng = np.random.default_rng(0)
    a, b = T.parameter(rng.normal(size=(3, 2))), T.parameter(rng.normal(size=(3, 2)))
    T.backward(T.sum(T.multiply(a, b)))
    np.testing.assert_array_equal(a.grad, b.data)
    np.testing.assert_array_equal(b.grad, a.data)


def test_square_gradient():
    a = T.parameter([[3.0]])
    T.backward(T.sum_of_squares(a))
    assert a.grad[0, 0] == 6.0


def test_backward_needs_scalar_root():
    with pytest.raises(ContractError):
        T.backward(T.parameter(np.ones((2, 2))))


def test_backward_accumulates_without_zeroing():
    a = T.parameter([[1.0, -2.0]])
    T.backward(T.sum_of_squares(a))
    first = a.grad.copy()
    T.backward(T.sum_of_squares(a))
    np.testing.assert_array_equal(a.grad, 2 * first)
    a.zero_grad()
    T.backward(T.sum_of_squares(a))
    np.testing.assert_array_equal(a.grad, first)


def test_grad_shape_matches_payload_and_reads_zero():
    a = T.parameter(np.ones((2, 5)))
    assert a.grad.shape == (2, 5) and not a.grad.any()
    with pytest.raises(DimensionError):
        a.set_grad(np.ones((5, 2)))


def test_no_grad_records_nothing():
    a = T.parameter([[1.0]])
    with T.no_grad():
        out = T.scale(a, 2.0)
    assert out.parents == () and not out.requires_grad


@given(mat(4, 3), mat(4, 3))
@settings(max_examples=30, deadline=None)
def test_gradient_linearity(x, y):
    def build(p):
        return T.sum(T.multiply(T.exp(T.scale(p, 0.5)), y)), T.sum_of_squares(T.matmul(p, T.transpose(p)))

    p = T.parameter(x)
    r1, r2 = build(p)
    T.backward(T.add(r1, r2))
    joint = p.grad.copy()
    p.zero_grad()
    r1, _ = build(p)
    T.backward(r1)
    g1 = p.grad.copy()
    p.zero_grad()
    _, r2 = build(p)
    T.backward(r2)
    np.testing.assert_allclose(joint, g1 + p.grad, rtol=1e-12, atol=1e-12)


def test_shared_subexpression_gets_both_paths():
    a = T.parameter([[2.0]])
    b = T.multiply(a, a)
    T.backward(T.add(b, b))
    assert a.grad[0, 0] == 8.0


# ---------------------------------------------------------------- finite differences


def test_finite_diff_quadratic_is_exact():
    assert T.finite_diff_check(lambda x: T.sum_of_squares(x), [[3.0]]) < 1e-9


def test_finite_diff_relu_away_from_kink():
    x = T.parameter([[2.0, -2.0]])
    T.backward(T.sum(T.relu(x)))
    np.testing.assert_array_equal(x.grad, [[1.0, 0.0]])
    assert T.finite_diff_check(lambda v: T.sum(T.relu(v)), [[2.0, -2.0]]) < 1e-9


def test_finite_diff_rejects_nonscalar_and_bad_step():
    with pytest.raises(ContractError):
        T.finite_diff_check(lambda x: x, np.ones((2, 2)))
    with pytest.raises(ContractError):
        T.finite_diff_check(lambda x: T.sum(x), np.ones((1, 1)), h=0)


def _op_cases(rng):
    """(name, scalar function of x) for every primitive, on freshly drawn shapes."""
    r, c, k = (int(v) for v in rng.integers(2, 5, size=3))
    other = rng.uniform(-2, 2, size=(r, c))
    right = rng.uniform(-2, 2, size=(c, k))
    w = rng.uniform(-2, 2, size=(r, c))
    ids = rng.integers(0, 3, size=r)
    idx = rng.integers(0, r, size=r + 1)
    return r, c, [
        ("add", lambda x: T.sum(T.multiply(T.add(x, other), w))),
        ("add-broadcast", lambda x: T.sum(T.multiply(T.add(T.column_mean(x), other), w))),
        ("subtract", lambda x: T.sum(T.multiply(T.subtract(other, x), w))),
        ("multiply", lambda x: T.sum_of_squares(T.multiply(x, other))),
        ("divide", lambda x: T.sum(T.divide(x, T.add(T.multiply(other, other), 1.0)))),
        ("divide-denominator", lambda x: T.sum(T.divide(other, T.add(T.multiply(x, x), 1.0)))),
        ("scale", lambda x: T.sum(T.multiply(T.scale(x, -1.7), w))),
        ("matmul-left", lambda x: T.sum_of_squares(T.matmul(x, right))),
        ("matmul-right", lambda x: T.sum_of_squares(T.matmul(T.transpose(right), T.transpose(x)))),
        ("transpose", lambda x: T.sum(T.multiply(T.transpose(x), w.T))),
        ("relu", lambda x: T.sum(T.multiply(T.relu(x), w))),
        ("exp", lambda x: T.sum(T.multiply(T.exp(x), w))),
        ("log", lambda x: T.sum(T.multiply(T.log(T.add(T.multiply(x, x), 0.5)), w))),
        ("column_mean", lambda x: T.sum_of_squares(T.column_mean(x))),
        ("column_std", lambda x: T.sum(T.multiply(T.column_std(x), w[:1]))),
        ("sum", lambda x: T.sum(x)),
        ("sum_of_squares", lambda x: T.sum_of_squares(x)),
        ("row_slice", lambda x: T.sum_of_squares(T.row_slice(x, idx))),
        ("row_slice-range", lambda x: T.sum_of_squares(T.row_slice(x, slice(1, r)))),
        ("concat_columns", lambda x: T.sum_of_squares(T.concat_columns([x, T.scale(x, 2.0), other]))),
        ("segment-sum", lambda x: T.sum_of_squares(T.segment_reduce(x, ids, "sum", 3))),
        ("segment-mean", lambda x: T.sum_of_squares(T.segment_reduce(x, ids, "mean", 3))),
        ("segment-max", lambda x: T.sum_of_squares(T.segment_reduce(x, ids, "max", 3))),
    ]


def test_every_primitive_matches_finite_differences():
    rng = np.random.default_rng(2024)
    worst = {}
    for _ in range(100):
        r, c, cases = _op_cases(rng)
        x = rng.uniform(-2, 2, size=(r, c))
        for name, f in cases:
            if name == "relu":
                x = np.where(np.abs(x) < 1e-3, 0.5, x)
            err = T.finite_diff_check(f, x)
            worst[name] = max(worst.get(name, 0.0), err)
    bad = {k: v for k, v in worst.items() if v >= 1e-4}
    assert not bad, bad


def test_segment_max_ties_split_gradient():
    x = T.parameter([[1.0], [1.0], [0.0]])
    T.backward(T.sum(T.segment_reduce(x, [0, 0, 0], "max", 1)))
    np.testing.assert_allclose(x.grad, [[0.5], [0.5], [0.0]])


# ---------------------------------------------------------------- Adam


def test_adam_first_step_closed_form():
    p = T.parameter([[0.0]])
    p.set_grad([[1.0]])
    state = T.AdamState(lr=1e-3)
    T.adam_step([p], state)
    assert abs(p.data[0, 0] + 1e-3 / (1 + 1e-8)) < 1e-15
    assert state.step == 1
    np.testing.assert_array_equal(p.grad, [[1.0]])  # gradients are not cleared


def test_adam_zero_gradient_no_move():
    p = T.parameter([[0.3, -0.2]])
    p.set_grad(np.zeros((1, 2)))
    T.adam_step({"p": p}, T.AdamState())
    np.testing.assert_array_equal(p.data, [[0.3, -0.2]])


def test_adam_constant_gradient_moves_monotonically():
    p = T.parameter([[1.0]])
    state = T.AdamState(lr=0.1)
    values = [1.0]
    for _ in range(2):
        p.set_grad([[2.0]])
        T.adam_step([p], state)
        values.append(p.data[0, 0])
    assert values[0] > values[1] > values[2]
    assert state.step == 2 and state.m[0].shape == (1, 1)


def test_adam_missing_gradient_names_parameter():
    p = T.parameter([[1.0]], name="layer0.W")
    with pytest.raises(ContractError, match="layer0.W"):
        T.adam_step([p], T.AdamState())


def test_adam_moment_shapes_follow_parameters():
    a, b = T.parameter(np.ones((2, 3))), T.parameter(np.ones((1, 4)))
    for p in (a, b):
        p.set_grad(np.ones(p.shape))
    state = T.AdamState()
    T.adam_step({"a": a, "b": b}, state)
    assert state.m["a"].shape == (2, 3) and state.v["b"].shape == (1, 4)
