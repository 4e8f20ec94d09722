import numpy as np
import pytest

from fpan.layers import ConvLayer, ParameterStore, init_he, init_zero
from fpan.tensor import Tensor, sum_all
from fpan.training import adam_step


def test_he_bounds():
    w = init_he((16, 8, 3, 3), 0)
    b = np.sqrt(6 / 72)
    assert np.all(np.abs(w) <= b)


def test_he_determinism():
    np.testing.assert_array_equal(init_he((4, 4, 3, 3), 7), init_he((4, 4, 3, 3), 7))
    assert not np.array_equal(init_he((4, 4, 3, 3), 7), init_he((4, 4, 3, 3), 8))


def test_he_variance():
    # Var(U[-b, b]) = b^2 / 3
    w = init_he((100_000, 10), 3)
    b2 = 6 / 10
    assert abs(w.var() - b2 / 3) / (b2 / 3) < 0.05


def test_he_zero_fan_in():
    with pytest.raises(ValueError):
        init_he((4, 0, 3, 3), 0)


def test_init_zero():
    assert not init_zero((3, 2, 1, 1)).any()


def test_zero_layer_moves_after_adam_step():
    store = ParameterStore()
    conv = ConvLayer(store, "fuse", 2, 2, 1, zero=True)
    x = Tensor(np.random.default_rng(0).normal(size=(1, 2, 3, 3)))
    assert not conv.weight.data.any()
    sum_all(conv(x)).backward()
    adam_step(store, 1e-3, 1)
    assert conv.weight.data.any()


def test_duplicate_names_rejected():
    store = ParameterStore()
    ConvLayer(store, "a", 1, 1, 3)
    with pytest.raises(KeyError):
        ConvLayer(store, "a", 1, 1, 3)


def test_store_order_and_count():
    store = ParameterStore()
    ConvLayer(store, "first", 3, 4, 3)
    ConvLayer(store, "second", 4, 2, 1)
    assert store.names() == ["first.weight", "first.bias", "second.weight", "second.bias"]
    assert store.num_elements() == (3 * 4 * 9 + 4) + (4 * 2 + 2)


@pytest.mark.parametrize("k,s,p,hw,out", [(3, 1, None, 8, 8), (1, 1, None, 5, 5), (6, 2, 2, 24, 12), (6, 2, 2, 3, 1)])
def test_conv_layer_geometry(k, s, p, hw, out):
    layer = ConvLayer(ParameterStore(), "c", 2, 2, k, stride=s, pad=p)
    assert layer.output_size(hw, hw) == (out, out)
    assert layer(Tensor(np.zeros((1, 2, hw, hw)))).shape == (1, 2, out, out)


def test_biases_start_at_zero():
    layer = ConvLayer(ParameterStore(), "c", 3, 5, 3, seed=1)
    assert not layer.bias.data.any()
