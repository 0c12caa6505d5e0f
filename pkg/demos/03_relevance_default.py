"""Default-mode relevance: trace one prediction back to its features.

One unit of relevance enters at the predicted class and flows backward.
Whatever the features do not receive is accounted for explicitly: bias
absorption, saturation drops, and (for pathological units) an unattributed
remainder, so the books always balance.
"""

import numpy as np

from backtrace import StartSpec, backtrace, forward, global_importance
from backtrace.serialize import load_model_files

model = load_model_files("models/oracle_mlp3.manifest.json")
sample = np.array([0.3, -1.2, 0.8, 2.0], dtype=np.float32)

prediction, trace = forward(model, sample)
rmap = backtrace(model, trace)  # start: 1.0 on the argmax logit

print("prediction:", prediction, "-> target unit", rmap.target_unit)
print("feature relevance:", rmap.node_relevance["x"])

# The mass ledger: everything the input did not receive is itemized.
print("\nper-layer ledger:")
for nid in model.topo_order[1:]:
    print(f"  {nid}: bias_absorbed={rmap.bias_absorbed[nid]:.6f} "
          f"saturation_dropped={rmap.saturation_dropped[nid]:.6f}")
print("unattributed:", rmap.unattributed)
print("leaf + bias + saturation + unattributed =", rmap.conservation_total())

# A different start: put the unit of relevance on class 0 instead.
alt = backtrace(model, trace, StartSpec(target_unit=0))
print("\nclass-0 relevance:", alt.node_relevance["x"])

# Local to global: normalize each sample by its outcome, then average.
samples = [np.array(v, dtype=np.float32) for v in
           ([0.3, -1.2, 0.8, 2.0], [1.0, 0.5, -0.4, 0.2], [-0.7, 0.9, 1.1, -0.2])]
maps, outcomes = [], []
for s in samples:
    pred, tr = forward(model, s)
    m = backtrace(model, tr)
    maps.append(m)
    outcomes.append(float(pred.reshape(-1)[m.target_unit]))
print("\nglobal importance:", global_importance(maps, outcomes))
