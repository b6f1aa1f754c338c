"""
Tests for the model format, inference and convolution lowering
"""

import json
import os
import sys

import numpy as np
import pytest

# Add the project root to the Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from utils.errors import DimensionMismatchError, ModelFormatError
from utils.network import (
    AffineLayer, Conv2DLayer, Network, ReluLayer, dump_layers, dump_model, forward_batch, infer,
    load_model, load_model_file, lower_conv,
)


def dense(weights, bias):
    return {"type": "dense", "weights": weights, "bias": bias}


def model_text(input_dim, num_classes, layers, **extra):
    return json.dumps({"version": 1, "input_dim": input_dim, "num_classes": num_classes,
                       "layers": layers, **extra})


def random_net(rng, sizes):
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        layers.append(AffineLayer(weights=rng.normal(size=(fan_out, fan_in)), bias=rng.normal(size=fan_out)))
        if i < len(sizes) - 2:
            layers.append(ReluLayer(width=fan_out))
    return Network(input_dim=sizes[0], layers=layers, num_classes=sizes[-1])


def test_load_single_dense_layer():
    """Dense 2381 -> 2 model loads with the right shape"""
    weights = np.zeros((2, 2381)).tolist()
    net = load_model(model_text(2381, 2, [dense(weights, [0.0, 1.0])]))
    assert net.input_dim == 2381
    assert net.num_classes == 2
    assert len(net.layers) == 1


def test_bias_length_mismatch_reports_layer():
    text = model_text(2, 2, [dense([[1.0, 0.0], [0.0, 1.0]], [0.0])])
    with pytest.raises(ModelFormatError) as info:
        load_model(text)
    assert info.value.layer_index == 0


def test_unknown_layer_type_reports_layer():
    text = model_text(2, 2, [dense([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]), {"type": "sigmoid"}])
    with pytest.raises(ModelFormatError) as info:
        load_model(text)
    assert info.value.layer_index == 1
    assert "sigmoid" in str(info.value)


def test_chain_mismatch_reports_layer():
    text = model_text(2, 2, [dense([[1.0, 0.0, 0.0]], [0.0]), dense([[1.0], [1.0]], [0.0, 0.0])])
    with pytest.raises(ModelFormatError) as info:
        load_model(text)
    assert info.value.layer_index == 0


def test_malformed_document():
    with pytest.raises(ModelFormatError):
        load_model("{not json")
    with pytest.raises(ModelFormatError):
        load_model(json.dumps({"version": 1, "input_dim": 2}))


def test_zero_weights_tie_breaks_to_lowest_index():
    net = load_model(model_text(2, 2, [dense([[0.0, 0.0], [0.0, 0.0]], [0.0, 0.0])]))
    logits, label = infer(net, [0.3, -4.0])
    assert logits.tolist() == [0.0, 0.0]
    assert label == 0


def test_identity_then_relu():
    net = load_model(model_text(2, 2, [dense([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]), {"type": "relu"}]))
    logits, label = infer(net, [-1.0, 2.0])
    assert logits.tolist() == [0.0, 2.0]
    assert label == 1


def test_random_net_matches_scalar_reference():
    rng = np.random.default_rng(3)
    net = random_net(rng, [4, 8, 3])
    W1, b1 = net.layers[0].weights, net.layers[0].bias
    W2, b2 = net.layers[2].weights, net.layers[2].bias
    for _ in range(100):
        x = rng.normal(size=4)
        hidden = [max(0.0, sum(W1[r, c] * x[c] for c in range(4)) + b1[r]) for r in range(8)]
        out = [sum(W2[r, c] * hidden[c] for c in range(8)) + b2[r] for r in range(3)]
        _, label = infer(net, x)
        assert label == int(np.argmax(out))


def test_infer_dimension_mismatch():
    net = random_net(np.random.default_rng(0), [3, 2])
    with pytest.raises(DimensionMismatchError):
        infer(net, [1.0, 2.0])


def test_forward_batch_matches_infer():
    rng = np.random.default_rng(5)
    net = random_net(rng, [5, 6, 6, 3])
    X = rng.normal(size=(20, 5))
    batch = forward_batch(net, X)
    for row, logits in zip(X, batch):
        assert np.allclose(infer(net, row)[0], logits, atol=1e-12)


def test_relu_outputs_are_non_negative():
    layer = ReluLayer(width=4)
    assert np.all(layer.apply(np.array([-3.0, 0.0, 2.0, -0.1])) >= 0.0)


def test_conv_model_matches_direct_convolution():
    """1x4x4 input, one 2x2 filter, stride 1"""
    rng = np.random.default_rng(11)
    kernel = rng.normal(size=(1, 1, 2, 2))
    conv = {"type": "conv2d", "in_shape": [1, 4, 4], "filters": 1, "kernel": [2, 2], "stride": [1, 1],
            "padding": [0, 0], "weights": kernel.tolist(), "bias": [0.25]}
    net = load_model(model_text(16, 9, [conv]))
    assert all(isinstance(layer, AffineLayer) for layer in net.layers)
    reference = Conv2DLayer(in_shape=(1, 4, 4), filters=1, kernel=(2, 2), stride=(1, 1), padding=(0, 0),
                            weights=kernel, bias=[0.25])
    for _ in range(10):
        x = rng.normal(size=16)
        assert np.allclose(net.forward(x), reference.apply(x), atol=1e-12)


def test_lower_identity_kernel():
    layer = Conv2DLayer(in_shape=(1, 3, 3), filters=1, kernel=(1, 1), stride=(1, 1), padding=(0, 0),
                        weights=np.ones((1, 1, 1, 1)), bias=[0.0])
    affine = lower_conv(layer)
    assert np.array_equal(affine.weights, np.eye(9))
    assert np.array_equal(affine.bias, np.zeros(9))


def test_lower_average_kernel():
    layer = Conv2DLayer(in_shape=(1, 2, 2), filters=1, kernel=(2, 2), stride=(1, 1), padding=(0, 0),
                        weights=np.full((1, 1, 2, 2), 0.25), bias=[0.0])
    affine = lower_conv(layer)
    x = np.array([1.0, 2.0, 3.0, 6.0])
    assert affine.apply(x).tolist() == [3.0]


@pytest.mark.parametrize("stride,padding", [((1, 1), (0, 0)), ((2, 2), (1, 1)), ((1, 2), (0, 1))])
def test_lower_random_conv(stride, padding):
    rng = np.random.default_rng(7)
    layer = Conv2DLayer(in_shape=(2, 3, 3), filters=2, kernel=(2, 2), stride=stride, padding=padding,
                        weights=rng.normal(size=(2, 2, 2, 2)), bias=rng.normal(size=2))
    affine = lower_conv(layer)
    for _ in range(10):
        x = rng.normal(size=18)
        assert np.allclose(affine.apply(x), layer.apply(x), atol=1e-12)


def test_kernel_larger_than_input():
    layer = Conv2DLayer(in_shape=(1, 2, 2), filters=1, kernel=(3, 3), stride=(1, 1), padding=(0, 0),
                        weights=np.ones((1, 1, 3, 3)), bias=[0.0])
    with pytest.raises(ModelFormatError):
        lower_conv(layer)


def test_conv_weight_shape_checked():
    with pytest.raises(DimensionMismatchError):
        Conv2DLayer(in_shape=(1, 4, 4), filters=2, kernel=(2, 2), stride=(1, 1), padding=(0, 0),
                    weights=np.ones((1, 1, 2, 2)), bias=[0.0, 0.0])


def test_dump_model_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    net = random_net(rng, [3, 5, 2])
    text = dump_model(net)
    assert dump_model(load_model(text)) == text
    path = tmp_path / "net.json"
    path.write_text(text)
    loaded = load_model_file(str(path))
    assert loaded.name == "net"
    for _ in range(10):
        x = rng.normal(size=3)
        assert np.array_equal(infer(loaded, x)[0], infer(net, x)[0])


def test_dump_layers_keeps_conv_form():
    layer = Conv2DLayer(in_shape=(1, 3, 3), filters=1, kernel=(2, 2), stride=(1, 1), padding=(0, 0),
                        weights=np.ones((1, 1, 2, 2)), bias=[0.5])
    text = dump_layers(9, 4, [layer], labels=["a", "b", "c", "d"])
    document = json.loads(text)
    assert document["layers"][0]["type"] == "conv2d"
    net = load_model(text)
    assert net.class_name(2) == "c"
    assert np.allclose(net.forward(np.arange(9.0)), layer.apply(np.arange(9.0)))


def test_network_rejects_unlowered_conv():
    layer = Conv2DLayer(in_shape=(1, 2, 2), filters=1, kernel=(1, 1), stride=(1, 1), padding=(0, 0),
                        weights=np.ones((1, 1, 1, 1)), bias=[0.0])
    with pytest.raises(ModelFormatError):
        Network(input_dim=4, layers=[layer], num_classes=4)
