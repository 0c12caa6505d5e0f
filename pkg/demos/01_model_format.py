"""Build a tiny model in memory, save it to the portable format, load it back.

The format is two files: a strict JSON manifest describing the graph and a
raw float32 blob holding the parameters, each one 64-byte aligned.
"""

import json

import numpy as np

from backtrace import load_model, models_equal, save_model
from backtrace.activations import make_desc
from backtrace.model import GraphModel, NodeSpec

# A 3-feature input feeding one dense unit: y = relu(W x + b).
nodes = [
    NodeSpec("x", "input", attrs={"shape": (3,), "dtype": "f32"}),
    NodeSpec(
        "fc",
        "dense",
        {"W": np.array([[1.0, 1.0, -2.0]], dtype=np.float32),
         "b": np.array([0.5], dtype=np.float32)},
        activation=make_desc("relu"),
    ),
]
model = GraphModel(1, nodes, [("x", "fc", 0)], ["x"], "fc")

# Serialize: the manifest is readable JSON, the weights a compact blob.
manifest_bytes, weights_bytes = save_model(model)
print(json.dumps(json.loads(manifest_bytes), indent=2)[:400], "...")
print(f"\nweights blob: {len(weights_bytes)} bytes "
      f"(W at offset 0, b at the next 64-byte boundary)")

# Round-trip: loading what we saved gives a structurally identical model
# with bit-identical parameters.
again = load_model(manifest_bytes, weights_bytes)
print("round-trip identical:", models_equal(model, again))

# Validation is strict. A manifest with an unknown field is rejected, not
# silently accepted:
doc = json.loads(manifest_bytes)
doc["nodes"][1]["framework_hint"] = "keras"
try:
    load_model(json.dumps(doc).encode(), weights_bytes)
except Exception as exc:
    print("rejected as expected:", exc)
