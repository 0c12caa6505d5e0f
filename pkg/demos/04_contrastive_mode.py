"""Contrastive relevance: supporting and detracting evidence, separately.

Each node carries a (positive, negative) pair.  At every unit the pair is
re-routed by the sign of the unit's net total and by which channel
dominates, so evidence that works against the prediction stays visible
instead of canceling out.
"""

import numpy as np

from backtrace import backtrace, forward
from backtrace.serialize import load_model_files

model = load_model_files("models/oracle_mlp3.manifest.json")
sample = np.array([0.3, -1.2, 0.8, 2.0], dtype=np.float32)

prediction, trace = forward(model, sample)

single = backtrace(model, trace)
dual = backtrace(model, trace, mode="contrastive")

supporting, detracting = dual.node_relevance["x"]
print("prediction:        ", prediction)
print("single-channel:    ", np.round(single.node_relevance["x"], 6))
print("supporting channel:", np.round(supporting, 6))
print("detracting channel:", np.round(detracting, 6))

# Both channels are non-negative magnitudes on dense/conv graphs; a feature
# can be big in both at once, which the single channel cannot express.
print("channels non-negative:", bool((supporting >= 0).all() and (detracting >= 0).all()))

# Per-layer channel totals, the raw material for network-level analysis.
print("\nper-layer channel totals:")
for nid in model.topo_order[1:]:
    pos, neg = dual.node_relevance[nid]
    print(f"  {nid}: positive={float(np.sum(pos)):.6f} negative={float(np.sum(neg)):.6f}")
