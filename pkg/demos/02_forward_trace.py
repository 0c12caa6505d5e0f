"""Run a sample forward and look inside the activation trace.

The trace is what the relevance rules consume later: every node's inputs,
pre-activation and output, plus the attention intermediates for mha nodes.
"""

import numpy as np

from backtrace import forward
from backtrace.serialize import load_model_files

model = load_model_files("models/oracle_mlp2.manifest.json")
sample = np.array([2.0, -1.0, 3.0], dtype=np.float32)

prediction, trace = forward(model, sample)
print("prediction:", prediction)

for nid in model.topo_order:
    entry = trace[nid]
    pre = None if entry.pre_activation is None else entry.pre_activation.tolist()
    print(f"{nid:>4}: output={entry.output.tolist()} pre_activation={pre}")

# Attention nodes cache the projected queries/keys/values, the post-softmax
# attention matrix per head, and the concatenated head outputs.
encoder = load_model_files("models/tiny_encoder.manifest.json")
_, enc_trace = forward(encoder, np.array([3, 5, 1, 9]))
extras = enc_trace["attn1"].extras
print("\nattention intermediates:", {k: v.shape for k, v in extras.items()})
print("attention rows sum to 1:", np.allclose(extras["x_QK"].sum(axis=-1), 1.0))

# Determinism: running twice gives bit-identical predictions and traces.
p1, _ = forward(encoder, np.array([3, 5, 1, 9]))
p2, _ = forward(encoder, np.array([3, 5, 1, 9]))
print("repeat runs bit-identical:", p1.tobytes() == p2.tobytes())
