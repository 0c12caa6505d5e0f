"""Conv relevance beyond the basics: contrastive route parity, same-padding
mass accounting, CNN-wide walks in both modes."""

import numpy as np

from backtrace import (
    backtrace,
    forward,
    propagate_contrastive_dense,
    propagate_conv2d,
)
from backtrace.activations import make_desc
from backtrace.metrics import philox_stream
from backtrace.model import GraphModel, NodeSpec
from backtrace.toys import synthetic_blobs

from conftest import single_dense_model
from oracles import conv_as_dense


def conv_model(kernel, bias, input_shape, activation=None, stride=1, padding="valid"):
    nodes = [
        NodeSpec("img", "input", attrs={"shape": input_shape, "dtype": "f32"}),
        NodeSpec("conv", "conv2d",
                 {"W": np.asarray(kernel, dtype=np.float32),
                  "b": np.asarray(bias, dtype=np.float32)},
                 attrs={"stride": stride, "padding": padding},
                 activation=make_desc(activation) if activation else None),
    ]
    return GraphModel(1, nodes, [("img", "conv", 0)], ["img"], "conv")


class TestContrastiveConv:
    def test_matches_dense_lowering(self):
        rng = philox_stream(71)
        kernel = rng.uniform(-1, 1, (2, 2, 2, 3))
        bias = rng.uniform(-0.5, 0.5, 3)
        model = conv_model(kernel, bias, (4, 4, 2))
        x = rng.uniform(-1, 1, (4, 4, 2)).astype(np.float32)
        _, trace = forward(model, x)
        out_shape = trace["conv"].output.shape
        r_p = rng.uniform(0, 1, out_shape)
        r_n = rng.uniform(0, 1, out_shape)
        (rel_p, rel_n), ledger = propagate_conv2d(
            model, "conv", trace, (r_p, r_n), mode="contrastive"
        )

        W_low, b_low = conv_as_dense(kernel, bias, (4, 4, 2))
        dense = single_dense_model(W_low, b_low)
        _, dtrace = forward(dense, x.reshape(-1))
        drel_p, drel_n, dledger = propagate_contrastive_dense(
            dense, "fc", dtrace, r_p.reshape(-1), r_n.reshape(-1)
        )
        np.testing.assert_allclose(rel_p.reshape(-1), drel_p, atol=1e-9)
        np.testing.assert_allclose(rel_n.reshape(-1), drel_n, atol=1e-9)
        np.testing.assert_allclose(ledger.unattributed, dledger.unattributed, atol=1e-9)

    def test_channels_nonnegative_on_cnn_walk(self, toy_cnn):
        samples, _ = synthetic_blobs(6, seed=3)
        for sample in samples:
            _, trace = forward(toy_cnn, sample)
            rmap = backtrace(toy_cnn, trace, mode="contrastive")
            for nid, value in rmap.node_relevance.items():
                assert (np.asarray(value[0]) >= -1e-12).all(), nid
                assert (np.asarray(value[1]) >= -1e-12).all(), nid


class TestSamePaddingConv:
    def test_default_mode_conserves_mass(self):
        rng = philox_stream(73)
        kernel = rng.uniform(-1, 1, (3, 3, 1, 2))
        bias = rng.uniform(-0.2, 0.2, 2)
        model = conv_model(kernel, bias, (5, 5, 1), activation="relu",
                          stride=2, padding="same")
        x = rng.uniform(-1, 1, (5, 5, 1)).astype(np.float32)
        _, trace = forward(model, x)
        incoming = rng.uniform(0, 1, trace["conv"].output.shape)
        rel, ledger = propagate_conv2d(model, "conv", trace, incoming)
        total = (rel.sum() + ledger.bias_absorbed + ledger.saturation_dropped
                 + ledger.unattributed)
        np.testing.assert_allclose(total, incoming.sum(), rtol=1e-9)

    def test_padded_cells_get_no_relevance(self):
        # All-ones input: any mass reaching the border must come from real
        # cells, and the cropped result must carry the full incoming mass.
        kernel = np.ones((3, 3, 1, 1))
        model = conv_model(kernel, [0.0], (4, 4, 1), padding="same")
        x = np.ones((4, 4, 1), dtype=np.float32)
        _, trace = forward(model, x)
        incoming = np.ones(trace["conv"].output.shape)
        rel, ledger = propagate_conv2d(model, "conv", trace, incoming)
        np.testing.assert_allclose(
            rel.sum() + ledger.unattributed, incoming.sum(), rtol=1e-9
        )

    def test_full_cnn_walk_both_modes_finite(self, toy_cnn):
        sample = synthetic_blobs(2, seed=9)[0][1]
        _, trace = forward(toy_cnn, sample)
        default = backtrace(toy_cnn, trace)
        np.testing.assert_allclose(default.conservation_total(), 1.0, rtol=1e-9)
        dual = backtrace(toy_cnn, trace, mode="contrastive")
        leaf_p, leaf_n = dual.node_relevance["pixels"]
        assert np.isfinite(leaf_p).all() and np.isfinite(leaf_n).all()
