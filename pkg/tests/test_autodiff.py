"""Autodiff primitives: forward values, backward vs finite differences."""

import numpy as np
import pytest

from salab.autodiff import (
    Adam,
    Tensor,
    attention_weights,
    bce_with_logits,
    dropout,
    embedding_lookup,
    grad_check,
    layer_norm,
    linear,
    masked_mean_pool,
)
from salab.exceptions import EmptyPoolError, PoisonedGradientError, ShapeError
from salab.simplex import MappingKind


def t64(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def test_linear_examples():
    y = linear(t64([[1.0, 0.0]]), t64([[2.0, 0.0], [0.0, 3.0]]), t64([0.0, 0.0]))
    np.testing.assert_array_equal(y.data, [[2.0, 0.0]])
    y = linear(t64([[1.0, 1.0]]), t64([[1.0, 1.0], [1.0, 1.0]]), t64([1.0, 1.0]))
    np.testing.assert_array_equal(y.data, [[3.0, 3.0]])


def test_linear_weight_gradient():
    W = t64([[0.1, -0.2], [0.3, 0.4]])
    x = t64([[1.0, 2.0]], grad=False)
    out = linear(x, W).sum()
    out.backward()
    np.testing.assert_allclose(W.grad, [[1.0, 1.0], [2.0, 2.0]])


def test_linear_shape_error_names_shapes():
    with pytest.raises(ShapeError, match="3"):
        linear(t64([[1.0, 2.0, 3.0]]), t64([[1.0], [1.0]]))


def test_embedding_lookup_padding_and_repeat():
    table = t64(np.arange(12, dtype=float).reshape(4, 3))
    np.testing.assert_array_equal(embedding_lookup(np.array([2, 2]), table).data,
                                  [[6, 7, 8], [6, 7, 8]])
    zeros = embedding_lookup(np.array([0]), Tensor(np.zeros((4, 3)))).data
    np.testing.assert_array_equal(zeros, [[0, 0, 0]])
    with pytest.raises(IndexError):
        embedding_lookup(np.array([4]), table)


def test_embedding_backward_scatter_adds_and_freezes_pad_row():
    table = t64(np.ones((4, 2)))
    out = embedding_lookup(np.array([2, 2, 0]), table).sum()
    out.backward()
    np.testing.assert_array_equal(table.grad[2], [2.0, 2.0])
    np.testing.assert_array_equal(table.grad[0], [0.0, 0.0])


def test_masked_mean_pool():
    x = t64([[1.0, 1.0], [3.0, 3.0]])
    np.testing.assert_array_equal(
        masked_mean_pool(x, np.array([True, True])).data, [2.0, 2.0]
    )
    x = t64([[1.0, 1.0], [9.0, 9.0]])
    np.testing.assert_array_equal(
        masked_mean_pool(x, np.array([True, False])).data, [1.0, 1.0]
    )
    with pytest.raises(EmptyPoolError):
        masked_mean_pool(x, np.array([False, False]))


def test_masked_mean_pool_gradient_split():
    x = t64([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    masked_mean_pool(x, np.array([True, True, False])).sum().backward()
    np.testing.assert_allclose(x.grad, [[0.5, 0.5], [0.5, 0.5], [0.0, 0.0]])


def test_layer_norm_examples():
    g, b = t64([1.0, 1.0, 1.0], grad=False), t64([0.0, 0.0, 0.0], grad=False)
    np.testing.assert_allclose(
        layer_norm(t64([1.0, 1.0, 1.0]), g, b).data, [0.0, 0.0, 0.0], atol=1e-6
    )
    y = layer_norm(t64([1.0, -1.0]), t64([1.0, 1.0]), t64([0.0, 0.0])).data
    np.testing.assert_allclose(y, [1.0, -1.0], atol=1e-3)


def test_layer_norm_statistics():
    rng = np.random.default_rng(0)
    x = t64(rng.normal(3.0, 2.0, (50, 64)))
    gain, bias = t64(np.full(64, 1.5)), t64(np.full(64, -0.5))
    y = layer_norm(x, gain, bias).data
    np.testing.assert_allclose(y.mean(axis=-1), -0.5, atol=1e-6)
    np.testing.assert_allclose(y.std(axis=-1), 1.5, rtol=1e-3)


def test_dropout_contract():
    x = t64(np.ones((4, 4)))
    assert dropout(x, 0.0, True, np.random.default_rng(0)) is x
    assert dropout(x, 0.5, False) is x
    rng = np.random.default_rng(0)
    y = dropout(x, 0.5, True, rng).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    with pytest.raises(ValueError):
        dropout(x, 1.0, True, rng)


def test_bce_examples():
    loss = bce_with_logits(t64(np.array(0.0)), np.array(1.0))
    assert loss.item() == pytest.approx(np.log(2), abs=1e-9)
    assert bce_with_logits(t64(np.array(20.0)), np.array(1.0)).item() <= 1e-8
    # symmetric saturated case must not overflow
    assert np.isfinite(bce_with_logits(t64(np.array(-500.0)), np.array(0.0)).item())


def test_relu_and_arithmetic_gradcheck():
    x = t64(np.random.default_rng(1).normal(0, 1, (3, 4)))

    def f():
        return ((x.relu() * 2.0 + 1.0) * x - x / 2.0).sum()

    assert grad_check(f, {"x": x}) <= 1e-7


def test_layer_norm_gradcheck():
    rng = np.random.default_rng(2)
    x, g, b = t64(rng.normal(0, 1, (2, 5))), t64(rng.normal(1, 0.1, 5)), t64(rng.normal(0, 0.1, 5))

    def f():
        return (layer_norm(x, g, b) * 1.5).sum()

    assert grad_check(f, {"x": x, "g": g, "b": b}) <= 1e-6


def test_bce_linear_chain_gradcheck():
    rng = np.random.default_rng(3)
    x = t64(rng.normal(0, 1, (4, 3)))
    W = t64(rng.normal(0, 1, (3, 1)))
    labels = np.array([1.0, 0.0, 1.0, 0.0])

    def f():
        return bce_with_logits(linear(x, W).reshape(4), labels).mean()

    assert grad_check(f, {"x": x, "W": W}) <= 1e-4


def test_attention_weights_gradcheck_all_mappings():
    rng = np.random.default_rng(4)
    for kind in (MappingKind.softmax(), MappingKind.sparsemax(), MappingKind.entmax15()):
        z = t64(rng.normal(0, 1, (3, 5)))
        u = rng.normal(0, 1, (3, 5))

        def f():
            return (attention_weights(z, kind) * Tensor(u)).sum()

        assert grad_check(f, {"z": z}) <= 1e-4


def test_gradient_accumulation_is_additive():
    x = t64(np.array([1.0, 2.0]))
    (x.sum() + (x * x).sum()).backward()
    np.testing.assert_allclose(x.grad, [3.0, 5.0])


# ---------------------------------------------------------------------------
# Adam

def test_adam_zero_grad_leaves_params():
    p = t64(np.array([1.0, -1.0]))
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -1.0])


def test_adam_first_step_magnitude():
    p = t64(np.array(0.0))
    opt = Adam({"p": p}, lr=1e-2)
    p.grad = np.array(1.0)
    opt.step()
    assert p.data == pytest.approx(-1e-2, rel=1e-6)


def test_adam_rejects_nan_gradient():
    p = t64(np.array([0.0]))
    opt = Adam({"p": p})
    p.grad = np.array([np.nan])
    with pytest.raises(PoisonedGradientError):
        opt.step()


def test_adam_determinism():
    def run():
        rng = np.random.default_rng(5)
        p = t64(rng.normal(0, 1, 8))
        opt = Adam({"p": p}, lr=1e-3)
        for _ in range(20):
            opt.zero_grad()
            (p * p).sum().backward()
            opt.step()
        return p.data.copy()

    np.testing.assert_array_equal(run(), run())
