"""Relevance through attention blocks.

An attention node is unpacked into its projections and mixing steps: the
dense rule handles the output and Q/K/V projections, and between them the
relevance of the attention matrix, values, queries and keys comes from
matrix products with the cached forward tensors.
"""

import numpy as np

from backtrace import StartSpec, backtrace, forward
from backtrace.serialize import load_model_files

# Small enough to check by hand: 2 tokens, width 2, identity projections.
mha = load_model_files("models/mha_2x2.manifest.json")
x = np.array([[0.9, -0.4], [0.3, 0.7]], dtype=np.float32)

prediction, trace = forward(mha, x)
print("attention matrix:\n", trace["attn"].extras["x_QK"][0])

rmap = backtrace(mha, trace, StartSpec(target_unit=0))
print("\nrelevance of the block input (start on output[0,0]):")
print(rmap.node_relevance["x"])

# The same walk runs through a two-block encoder with layernorm, residual
# adds and a softmax head; token relevance has the input's shape.
encoder = load_model_files("models/tiny_encoder.manifest.json")
tokens = np.array([3, 5, 1, 9])
pred, enc_trace = forward(encoder, tokens)
enc_map = backtrace(encoder, enc_trace)
print("\nencoder prediction:", pred)
print("token relevance:   ", enc_map.node_relevance["tokens"])
print("all finite:        ", bool(np.isfinite(enc_map.node_relevance['tokens']).all()))
