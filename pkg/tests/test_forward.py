"""Forward engine: kernels, trace contents, determinism, batch isolation."""

import numpy as np
import pytest

from backtrace import (
    BatchForwardError,
    NonFiniteValue,
    ShapeMismatch,
    forward,
    forward_batch,
)
from backtrace.model import GraphModel, NodeSpec

from conftest import single_dense_model


def conv_reference(x, kernel, bias, stride=(1, 1)):
    """Naive quintuple-loop conv2d (valid padding) the engine must agree with."""
    H, W, _ = x.shape
    kh, kw, cin, cout = kernel.shape
    sh, sw = stride
    Ho, Wo = (H - kh) // sh + 1, (W - kw) // sw + 1
    out = np.zeros((Ho, Wo, cout))
    for oh in range(Ho):
        for ow in range(Wo):
            for oc in range(cout):
                acc = 0.0
                for i in range(kh):
                    for j in range(kw):
                        for c in range(cin):
                            acc += kernel[i, j, c, oc] * x[oh * sh + i, ow * sw + j, c]
                out[oh, ow, oc] = acc + bias[oc]
    return out


class TestDense:
    def test_hand_example(self):
        model = single_dense_model([[1.0, 1.0, -2.0]], [0.5])
        prediction, trace = forward(model, [2.0, -1.0, 3.0])
        np.testing.assert_allclose(prediction, [-4.5], atol=1e-7)
        np.testing.assert_allclose(trace["fc"].pre_activation, [-4.5], atol=1e-7)

    def test_identity(self):
        model = single_dense_model(np.eye(2), [0.0, 0.0])
        prediction, _ = forward(model, [3.0, 5.0])
        np.testing.assert_array_equal(prediction, [3.0, 5.0])

    def test_relu_applied_after_pre_activation_cached(self):
        model = single_dense_model([[1.0, -1.0]], [0.0], activation="relu")
        prediction, trace = forward(model, [1.0, 3.0])
        np.testing.assert_allclose(trace["fc"].pre_activation, [-2.0])
        np.testing.assert_allclose(prediction, [0.0])

    def test_shape_mismatch(self):
        model = single_dense_model(np.eye(2), [0.0, 0.0])
        with pytest.raises(ShapeMismatch):
            forward(model, [1.0, 2.0, 3.0])

    @pytest.mark.filterwarnings("ignore:overflow encountered in cast")
    def test_nonfinite_aborts_with_node_id(self):
        model = single_dense_model([[3.4e38, 3.4e38]], [0.0])
        with pytest.raises(NonFiniteValue, match="fc"):
            forward(model, [3.4e38, 3.4e38])


class TestConv:
    @pytest.mark.parametrize("stride", [(1, 1), (2, 2)])
    @pytest.mark.parametrize("cout", [1, 3])
    def test_against_quintuple_loop(self, stride, cout):
        rng = np.random.default_rng(11)
        x = rng.uniform(-1, 1, (8, 8, 3)).astype(np.float32)
        kernel = rng.uniform(-1, 1, (3, 3, 3, cout)).astype(np.float32)
        bias = rng.uniform(-0.5, 0.5, cout).astype(np.float32)
        nodes = [
            NodeSpec("img", "input", attrs={"shape": (8, 8, 3), "dtype": "f32"}),
            NodeSpec("conv", "conv2d", {"W": kernel, "b": bias},
                     attrs={"stride": list(stride), "padding": "valid"}),
        ]
        model = GraphModel(1, nodes, [("img", "conv", 0)], ["img"], "conv")
        prediction, _ = forward(model, x)
        want = conv_reference(x.astype(np.float64), kernel.astype(np.float64),
                              bias.astype(np.float64), stride)
        assert np.abs(prediction - want).max() <= 1e-5 * max(1.0, np.abs(want).max())

    def test_same_padding_shape(self):
        rng = np.random.default_rng(2)
        kernel = rng.uniform(-1, 1, (3, 3, 1, 2)).astype(np.float32)
        nodes = [
            NodeSpec("img", "input", attrs={"shape": (5, 5, 1), "dtype": "f32"}),
            NodeSpec("conv", "conv2d",
                     {"W": kernel, "b": np.zeros(2, dtype=np.float32)},
                     attrs={"stride": 1, "padding": "same"}),
        ]
        model = GraphModel(1, nodes, [("img", "conv", 0)], ["img"], "conv")
        prediction, _ = forward(model, rng.uniform(0, 1, (5, 5, 1)).astype(np.float32))
        assert prediction.shape == (5, 5, 2)


class TestPoolingAndStructural:
    def test_maxpool_exact(self):
        nodes = [
            NodeSpec("img", "input", attrs={"shape": (2, 2, 1), "dtype": "f32"}),
            NodeSpec("pool", "maxpool2d", attrs={"window": 2}),
        ]
        model = GraphModel(1, nodes, [("img", "pool", 0)], ["img"], "pool")
        x = np.array([[[1.0], [9.0]], [[3.0], [9.0]]], dtype=np.float32)
        prediction, _ = forward(model, x)
        assert prediction.reshape(()) == np.float32(9.0)

    def test_avgpool(self):
        nodes = [
            NodeSpec("img", "input", attrs={"shape": (2, 2, 1), "dtype": "f32"}),
            NodeSpec("pool", "avgpool2d", attrs={"window": 2}),
        ]
        model = GraphModel(1, nodes, [("img", "pool", 0)], ["img"], "pool")
        x = np.array([[[1.0], [2.0]], [[3.0], [6.0]]], dtype=np.float32)
        prediction, _ = forward(model, x)
        np.testing.assert_allclose(prediction.reshape(()), 3.0)

    def test_softmax_rows_sum_to_one(self, tiny_encoder):
        prediction, trace = forward(tiny_encoder, np.array([3, 5, 1, 9]))
        np.testing.assert_allclose(prediction.sum(), 1.0, atol=1e-6)
        for key in ("attn1", "attn2"):
            attn = trace[key].extras["x_QK"]
            np.testing.assert_allclose(attn.sum(axis=-1), np.ones_like(attn.sum(axis=-1)),
                                       atol=1e-6)

    def test_embedding_out_of_range(self, token_lookup):
        with pytest.raises(ShapeMismatch, match="token id out of range"):
            forward(token_lookup, np.array([99, 0, 0, 0, 0, 0]))


class TestMha:
    def test_identity_projection_attention_matrix(self):
        d, T = 4, 2
        eye = np.eye(d, dtype=np.float32)
        zeros = np.zeros(d, dtype=np.float32)
        params = {"W_Q": eye, "b_Q": zeros, "W_K": eye.copy(), "b_K": zeros.copy(),
                  "W_V": eye.copy(), "b_V": zeros.copy(), "W_O": eye.copy(),
                  "b_O": zeros.copy()}
        nodes = [
            NodeSpec("x", "input", attrs={"shape": (T, d), "dtype": "f32"}),
            NodeSpec("attn", "mha", params, attrs={"head_count": 1}),
        ]
        model = GraphModel(1, nodes, [("x", "attn", 0)], ["x"], "attn")
        rng = np.random.default_rng(0)
        _, trace = forward(model, rng.uniform(-1, 1, (T, d)).astype(np.float32))
        attn = trace["attn"].extras["x_QK"]
        assert attn.shape == (1, T, T)
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-6)
        for key in ("x_Q", "x_K", "x_V", "x_QK", "x_O_in"):
            assert key in trace["attn"].extras


class TestDeterminismAndBatch:
    def test_repeated_forward_bit_identical(self, tiny_encoder):
        sample = np.array([3, 5, 1, 9])
        p1, t1 = forward(tiny_encoder, sample)
        p2, t2 = forward(tiny_encoder, sample)
        assert p1.tobytes() == p2.tobytes()
        for nid, entry in t1.entries.items():
            assert entry.output.tobytes() == t2[nid].output.tobytes()

    def test_batch_matches_single(self, oracle_mlp2):
        samples = [np.array([1.0, 2.0, 3.0], dtype=np.float32)] * 2
        results = forward_batch(oracle_mlp2, samples)
        assert len(results) == 2
        assert results[0][0].tobytes() == results[1][0].tobytes()

    def test_batch_isolates_failures(self, oracle_mlp2):
        good = np.array([1.0, 2.0, 3.0], dtype=np.float32)
        bad = np.array([1.0, 2.0], dtype=np.float32)
        with pytest.raises(BatchForwardError, match="index 1") as info:
            forward_batch(oracle_mlp2, [good, bad, good])
        assert sorted(info.value.results) == [0, 2]
        assert isinstance(info.value.sample_errors[1], ShapeMismatch)

    def test_empty_batch(self, oracle_mlp2):
        assert forward_batch(oracle_mlp2, []) == []
