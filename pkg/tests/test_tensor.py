"""Tensor core: forward values, gradients vs finite differences, tape rules."""

import numpy as np
import pytest

from prunelab import tensor as T
from prunelab.exceptions import ContractError, DimensionError, InputError, NumericError

from fdcheck import ALL_OPS, run_case


def test_scalar_forward_values():
    assert T.gelu(T.Tensor(0.0)).item() == 0.0
    assert T.sigmoid(T.Tensor(0.0)).item() == 0.5
    row = T.softmax(T.Tensor([1.0, 1.0, 1.0, 1.0]))
    assert np.allclose(row.data, 0.25)
    x = np.array([[2.0, -1.0], [0.5, 3.0]])
    ident = np.eye(2)
    assert np.array_equal(T.matmul(T.Tensor(x), T.Tensor(ident)).data, x)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.normal(size=(3, 5)) * rng.uniform(1, 30)
        s = T.softmax(T.Tensor(x)).data
        assert np.all(np.abs(s.sum(axis=-1) - 1.0) <= 1e-12)
        assert np.all(s >= 0.0)


def test_gradients_match_finite_differences():
    for op in ALL_OPS:
        for case in range(8):
            rng = np.random.default_rng(1000 * hash(op) % 100003 + case)
            assert run_case(op, rng) < 1e-4, f"{op} case {case}"


def test_backward_accumulates_shared_input():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    y = T.add(T.multiply(x, 3.0), T.multiply(x, x))
    T.backward(y.sum())
    assert np.allclose(x.grad, 3.0 + 2.0 * x.data)


def test_backward_requires_scalar_and_nonempty_tape():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    y = T.multiply(x, 2.0)
    with pytest.raises(ContractError):
        T.backward(y)
    T.backward(y.sum())
    with pytest.raises(ContractError):
        T.backward(T.Tensor(0.0))


def test_tape_cleared_after_backward():
    x = T.Tensor([1.0], requires_grad=True)
    T.backward(T.multiply(x, x).sum())
    assert T.active_tape().nodes == []


def test_no_grad_suppresses_recording():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    with T.no_grad():
        y = T.multiply(x, x)
    assert not y.requires_grad
    assert T.active_tape().nodes == []


def test_constant_inputs_record_nothing():
    y = T.multiply(T.Tensor([1.0]), T.Tensor([2.0]))
    assert not y.requires_grad
    assert T.active_tape().nodes == []


def test_clamp_zero_gradient_outside():
    x = T.Tensor([-2.0, 0.0, 2.0], requires_grad=True)
    T.backward(T.clamp(x, -1.0, 1.0).sum())
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0])


def test_abs_subgradient_zero_at_origin():
    x = T.Tensor([0.0, -3.0, 2.0], requires_grad=True)
    T.backward(T.absolute(x).sum())
    assert np.array_equal(x.grad, [0.0, -1.0, 1.0])


def test_shape_errors_name_op():
    with pytest.raises(DimensionError, match="matmul"):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError, match="add"):
        T.add(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4,))))
    with pytest.raises(DimensionError, match="layer_norm"):
        T.layer_norm(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones(4)), T.Tensor(np.ones(3)))


def test_numeric_error_on_nonfinite():
    with pytest.raises(NumericError):
        T.log(T.Tensor([0.0]))
    with pytest.raises(NumericError):
        T.multiply(T.Tensor([1e300]), T.Tensor([1e300]))


def test_embedding_gather_bounds():
    table = T.Tensor(np.ones((4, 2)))
    with pytest.raises(InputError):
        T.embedding_gather(table, np.array([4]))
    with pytest.raises(InputError):
        T.embedding_gather(table, np.array([-1]))


def test_embedding_gather_scatter_adds_repeats():
    table = T.Tensor(np.arange(8, dtype=float).reshape(4, 2), requires_grad=True)
    out = T.embedding_gather(table, np.array([1, 1, 3]))
    T.backward(out.sum())
    expect = np.zeros((4, 2))
    expect[1] = 2.0
    expect[3] = 1.0
    assert np.array_equal(table.grad, expect)


def test_forward_determinism_bitwise():
    def run():
        rng = np.random.default_rng(123)
        x = T.Tensor(rng.normal(size=(4, 6)))
        w = T.Tensor(rng.normal(size=(6, 3)))
        out = T.softmax(T.gelu(T.matmul(x, w)))
        return out.data.tobytes()

    assert run() == run()


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    params = {
        "a.weight": rng.normal(size=(3, 4)),
        "b.bias": rng.normal(size=(7,)),
        "scalar": np.array(2.5),
    }
    path = tmp_path / "model.gcpt"
    T.save_checkpoint(path, params)
    loaded = T.load_checkpoint(path)
    assert set(loaded) == set(params)
    for name in params:
        assert np.array_equal(loaded[name], np.asarray(params[name]))


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bogus.gcpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(InputError):
        T.load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    path = tmp_path / "model.gcpt"
    T.save_checkpoint(path, {"w": np.ones((4, 4))})
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(InputError):
        T.load_checkpoint(path)
