"""Forward execution over a GraphModel, caching per-node tensors.

The engine evaluates one sample at a time in topological order and records,
for every node, its input tensors, pre-activation (dense/conv only) and
output.  Attention nodes additionally record the projected queries, keys
and values, the post-softmax attention matrix per head, and the
concatenated head outputs; the relevance rules consume those directly.

All reductions accumulate in float64 and are rounded to float32 at store,
so repeated runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import activations
from .errors import BatchForwardError, NonFiniteValue, ShapeMismatch
from .model import GraphModel, NodeSpec, _norm_pair


@dataclass
class NodeTrace:
    inputs: list[np.ndarray]
    pre_activation: np.ndarray | None
    output: np.ndarray
    extras: dict = field(default_factory=dict)


class ActivationTrace:
    """Per-node cached forward tensors for one sample."""

    def __init__(self):
        self.entries: dict[str, NodeTrace] = {}

    def __contains__(self, node_id):
        return node_id in self.entries

    def __getitem__(self, node_id) -> NodeTrace:
        return self.entries[node_id]

    def record(self, node_id, inputs, pre_activation, output, extras=None):
        self.entries[node_id] = NodeTrace(
            inputs=list(inputs),
            pre_activation=pre_activation,
            output=output,
            extras=dict(extras or {}),
        )


def _check_finite(node_id, *arrays):
    for arr in arrays:
        if arr is not None and not np.isfinite(arr).all():
            raise NonFiniteValue(f"node {node_id!r} produced a non-finite value")


def _as_f32(x):
    return np.ascontiguousarray(x, dtype=np.float32)


def _normalize_sample(model: GraphModel, leaf_id: str, value):
    shape = model.shapes[leaf_id]
    if model.dtypes[leaf_id] == "token_id":
        ids = np.asarray(value)
        if ids.ndim != 1 or ids.shape != shape:
            raise ShapeMismatch(
                f"input {leaf_id!r}: expected {shape} token ids, got shape {ids.shape}"
            )
        if not np.issubdtype(ids.dtype, np.integer):
            if np.issubdtype(ids.dtype, np.floating) and np.all(ids == ids.astype(np.int64)):
                ids = ids.astype(np.int64)
            else:
                raise ShapeMismatch(f"input {leaf_id!r}: token ids must be integers")
        return ids.astype(np.int64)
    arr = np.asarray(value, dtype=np.float32)
    if arr.shape != shape:
        raise ShapeMismatch(f"input {leaf_id!r}: expected shape {shape}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ShapeMismatch(f"input {leaf_id!r}: sample contains non-finite values")
    return np.ascontiguousarray(arr)


def im2col(x, kh, kw, sh, sw, padding, pad_value=0.0):
    """Extract conv/pool patches as a (Ho, Wo, kh*kw*C) array (float64).

    ``same`` padding pads symmetrically (extra cell at the end), matching the
    static shape rule ceil(H / stride).
    """
    H, W, C = x.shape
    if padding == "same":
        Ho, Wo = -(-H // sh), -(-W // sw)
        ph = max(0, (Ho - 1) * sh + kh - H)
        pw = max(0, (Wo - 1) * sw + kw - W)
        pads = ((ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2), (0, 0))
        x = np.pad(x, pads, constant_values=pad_value)
    else:
        Ho, Wo = (H - kh) // sh + 1, (W - kw) // sw + 1
        pads = ((0, 0), (0, 0), (0, 0))
    cols = np.empty((Ho, Wo, kh * kw * C), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            block = x[i : i + Ho * sh : sh, j : j + Wo * sw : sw, :]
            cols[:, :, (i * kw + j) * C : (i * kw + j + 1) * C] = block
    return cols, pads, Ho, Wo


def _eval_node(model: GraphModel, node: NodeSpec, inputs):
    """Compute (pre_activation, output, extras) for one node, float32 out."""
    nid = node.id
    if node.kind == "dense":
        x = inputs[0].astype(np.float64)
        W = node.params["W"].astype(np.float64)
        b = node.params["b"].astype(np.float64)
        z = x @ W.T + b
        out = activations.apply(node.activation.name, z) if node.activation else z
        return _as_f32(z), _as_f32(out), {}
    if node.kind == "conv2d":
        x = inputs[0].astype(np.float64)
        Wk = node.params["W"].astype(np.float64)
        b = node.params["b"].astype(np.float64)
        kh, kw, cin, cout = Wk.shape
        sh, sw = _norm_pair(node.attrs.get("stride", 1), "stride", nid)
        cols, _, Ho, Wo = im2col(x, kh, kw, sh, sw, node.attrs.get("padding", "valid"))
        z = cols.reshape(Ho * Wo, -1) @ Wk.reshape(-1, cout) + b
        z = z.reshape(Ho, Wo, cout)
        out = activations.apply(node.activation.name, z) if node.activation else z
        return _as_f32(z), _as_f32(out), {}
    if node.kind == "maxpool2d":
        x = inputs[0].astype(np.float64)
        kh, kw = _norm_pair(node.attrs["window"], "window", nid)
        sh, sw = _norm_pair(node.attrs.get("stride", (kh, kw)), "stride", nid)
        cols, _, Ho, Wo = im2col(x, kh, kw, sh, sw, "valid")
        C = x.shape[2]
        windows = cols.reshape(Ho, Wo, kh * kw, C)
        return None, _as_f32(windows.max(axis=2)), {}
    if node.kind == "avgpool2d":
        x = inputs[0].astype(np.float64)
        kh, kw = _norm_pair(node.attrs["window"], "window", nid)
        sh, sw = _norm_pair(node.attrs.get("stride", (kh, kw)), "stride", nid)
        cols, _, Ho, Wo = im2col(x, kh, kw, sh, sw, "valid")
        C = x.shape[2]
        windows = cols.reshape(Ho, Wo, kh * kw, C)
        return None, _as_f32(windows.mean(axis=2)), {}
    if node.kind == "flatten":
        return None, _as_f32(inputs[0].reshape(-1)), {}
    if node.kind == "add":
        acc = np.zeros(inputs[0].shape, dtype=np.float64)
        for arr in inputs:
            acc += arr.astype(np.float64)
        return None, _as_f32(acc), {}
    if node.kind == "concat":
        axis = node.attrs.get("axis", -1)
        return None, _as_f32(np.concatenate(inputs, axis=axis)), {}
    if node.kind == "embedding":
        ids = inputs[0]
        table = node.params["table"]
        if ids.min() < 0 or ids.max() >= table.shape[0]:
            raise ShapeMismatch(
                f"node {nid!r}: token id out of range [0, {table.shape[0]})"
            )
        return None, _as_f32(table[ids]), {}
    if node.kind == "layernorm":
        x = inputs[0].astype(np.float64)
        eps = float(node.attrs.get("epsilon", 1e-5))
        mu = x.mean(axis=-1, keepdims=True)
        sigma = np.sqrt(((x - mu) ** 2).mean(axis=-1, keepdims=True) + eps)
        out = (x - mu) / sigma * node.params["gamma"].astype(np.float64) + node.params[
            "beta"
        ].astype(np.float64)
        return None, _as_f32(out), {"mu": mu, "sigma": sigma}
    if node.kind == "softmax":
        x = inputs[0].astype(np.float64)
        axis = node.attrs.get("axis", -1)
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        return None, _as_f32(e / e.sum(axis=axis, keepdims=True)), {}
    if node.kind == "mha":
        return _eval_mha(node, inputs[0])
    if node.kind == "activation":
        from .model import activation_desc_of

        desc = activation_desc_of(node)
        return None, _as_f32(activations.apply(desc.name, inputs[0].astype(np.float64))), {}
    raise ShapeMismatch(f"node {nid!r}: kind {node.kind!r} is not executable")


def _split_heads(x, heads):
    T, d = x.shape
    return x.reshape(T, heads, d // heads)


def _eval_mha(node: NodeSpec, x):
    """Multi-head self-attention with full intermediate capture."""
    p = {k: v.astype(np.float64) for k, v in node.params.items()}
    heads = node.attrs["head_count"]
    x64 = x.astype(np.float64)
    x_q = x64 @ p["W_Q"].T + p["b_Q"]
    x_k = x64 @ p["W_K"].T + p["b_K"]
    x_v = x64 @ p["W_V"].T + p["b_V"]
    T, d = x_q.shape
    dk = d // heads
    qh, kh_, vh = (_split_heads(a, heads) for a in (x_q, x_k, x_v))
    attn = np.empty((heads, T, T), dtype=np.float64)
    mixed = np.empty((T, heads, dk), dtype=np.float64)
    for h in range(heads):
        scores = qh[:, h, :] @ kh_[:, h, :].T / np.sqrt(dk)
        e = np.exp(scores - scores.max(axis=-1, keepdims=True))
        attn[h] = e / e.sum(axis=-1, keepdims=True)
        mixed[:, h, :] = attn[h] @ vh[:, h, :]
    x_o_in = mixed.reshape(T, d)
    out = x_o_in @ p["W_O"].T + p["b_O"]
    extras = {
        "x_Q": _as_f32(x_q),
        "x_K": _as_f32(x_k),
        "x_V": _as_f32(x_v),
        "x_QK": _as_f32(attn),
        "x_O_in": _as_f32(x_o_in),
    }
    return None, _as_f32(out), extras


def forward(model: GraphModel, sample):
    """Run one sample through the model.

    ``sample`` is a single array (or token-id sequence) for single-input
    models, or a list/tuple with one entry per input leaf, in ``input_ids``
    order.  Returns ``(prediction, trace)``; any NaN/Inf aborts with the
    offending node's id.
    """
    if isinstance(sample, (list, tuple)) and len(model.input_ids) > 1:
        values = list(sample)
    else:
        values = [sample]
    if len(values) != len(model.input_ids):
        raise ShapeMismatch(
            f"model has {len(model.input_ids)} input leaves, got {len(values)} samples"
        )
    leaf_values = {
        leaf: _normalize_sample(model, leaf, value)
        for leaf, value in zip(model.input_ids, values)
    }

    trace = ActivationTrace()
    outputs: dict[str, np.ndarray] = {}
    for nid in model.topo_order:
        node = model.node_by_id[nid]
        if node.kind == "input":
            out = leaf_values[nid]
            trace.record(nid, [], None, out)
            outputs[nid] = out
            continue
        inputs = [outputs[p] for p in model.producers[nid]]
        pre, out, extras = _eval_node(model, node, inputs)
        _check_finite(nid, pre, out, *extras.values())
        trace.record(nid, inputs, pre, out, extras)
        outputs[nid] = out
    prediction = outputs[model.output_id]
    return prediction, trace


def forward_batch(model: GraphModel, samples):
    """Evaluate samples independently; order preserved.

    Failures are isolated per sample: if any sample fails, a
    ``BatchForwardError`` is raised naming the failing indices, with the
    successful ``(prediction, trace)`` pairs attached to the error.
    """
    results = {}
    errors = {}
    for i, sample in enumerate(samples):
        try:
            results[i] = forward(model, sample)
        except (ShapeMismatch, NonFiniteValue) as exc:
            errors[i] = exc
    if errors:
        raise BatchForwardError(errors, results)
    return [results[i] for i in range(len(results))]
