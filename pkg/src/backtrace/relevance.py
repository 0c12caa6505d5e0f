"""Relevance propagation from the root of a traced model back to its inputs.

Two modes are supported.  Default mode carries a single relevance tensor per
node and splits each unit's mass among its positive contributions, negative
contributions and bias, with saturation of a monotonic activation switching
off the corresponding side.  Contrastive mode carries a (supporting,
detracting) pair per node and routes the pair by the sign of the unit's net
pre-activation and by which channel dominates.

Mass accounting: whatever a dense/conv unit does not deliver to its inputs
is recorded per node as ``bias_absorbed`` (share of the bias term) or
``saturation_dropped`` (shares zeroed by a saturated activation).  Units
with no signal at all (positive, negative and bias magnitudes summing below
``DEGENERATE_EPS``) move their relevance to ``unattributed`` instead of
dividing by zero.  For graphs built from dense, conv, pooling, reshape,
add/concat, embedding, layernorm and softmax nodes this makes the start
mass exactly recoverable:

    start_scale = leaf relevance + bias_absorbed + saturation_dropped
                  + unattributed

Attention nodes mix relevance multiplicatively, which does not preserve
mass; the identity above therefore covers attention-free graphs.
Relevance math runs in float64 end to end.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .activations import (
    SATURATED_NEGATIVE_END,
    SATURATED_POSITIVE_END,
    ActivationDesc,
)
from .errors import EmptyInput, IncompleteTrace, ShapeMismatch
from .forward import ActivationTrace, im2col
from .model import GraphModel, NodeSpec, _norm_pair

DEGENERATE_EPS = 1e-12

_MHA_EXTRAS = ("x_Q", "x_K", "x_V", "x_QK", "x_O_in")


# ---------------------------------------------------------------------------
# unit decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnitDecomposition:
    """Split of one unit's pre-activation into signed parts.

    ``x_p`` sums the positive products weight*input, ``x_n`` the negative
    ones (so ``x_n <= 0``).  ``saturation_state`` is ``"negative_end"``,
    ``"positive_end"`` or ``None``.
    """

    x_p: float
    x_n: float
    bias: float
    saturation_state: str | None

    @property
    def t_default(self) -> float:
        return self.x_p + abs(self.x_n) + abs(self.bias)

    @property
    def t_contrastive(self) -> float:
        return self.x_p + self.x_n + self.bias


def decompose_unit(weights_row, input_vec, bias, activation: ActivationDesc | None,
                   pre_activation: float) -> UnitDecomposition:
    """Decompose a single unit; the vectorized rules follow the same math."""
    w = np.asarray(weights_row, dtype=np.float64)
    x = np.asarray(input_vec, dtype=np.float64)
    if w.shape != x.shape:
        raise ShapeMismatch(f"weights {w.shape} vs inputs {x.shape}")
    c = w * x
    x_p = float(c[c > 0].sum())
    x_n = float(c[c < 0].sum())
    state = None
    if activation is not None:
        code = int(activation.saturation_state(np.float64(pre_activation)))
        state = {SATURATED_NEGATIVE_END: "negative_end",
                 SATURATED_POSITIVE_END: "positive_end"}.get(code)
    return UnitDecomposition(x_p, x_n, float(bias), state)


# ---------------------------------------------------------------------------
# unit-level share computation (vectorized over units)
# ---------------------------------------------------------------------------


def _safe_frac(numer, denom):
    denom = denom[:, None]
    return np.divide(numer, denom, out=np.zeros_like(numer), where=denom > 0)


def _default_unit_shares(contribs, bias, r_y, sat_state):
    """Distribute r_y over contributions for a batch of units.

    contribs: (U, K) products weight*input per unit; bias, r_y, sat_state: (U,).
    Returns (shares (U, K), bias_absorbed, saturation_dropped, unattributed).
    """
    pos = np.where(contribs > 0, contribs, 0.0)
    neg = np.where(contribs < 0, -contribs, 0.0)
    x_p = pos.sum(axis=1)
    x_n_mag = neg.sum(axis=1)
    b_mag = np.abs(bias)
    total = x_p + x_n_mag + b_mag
    degenerate = total <= DEGENERATE_EPS
    unattributed = float(r_y[degenerate].sum())
    safe_total = np.where(degenerate, 1.0, total)
    live = ~degenerate
    r_pos = np.where(live, x_p / safe_total * r_y, 0.0)
    r_neg = np.where(live, x_n_mag / safe_total * r_y, 0.0)
    r_bias = np.where(live, b_mag / safe_total * r_y, 0.0)

    pos_shares = _safe_frac(pos, x_p) * r_pos[:, None]
    neg_shares = _safe_frac(neg, x_n_mag) * r_neg[:, None]

    saturation_dropped = 0.0
    neg_end = sat_state == SATURATED_NEGATIVE_END
    if neg_end.any():
        saturation_dropped += float(pos_shares[neg_end].sum())
        pos_shares[neg_end] = 0.0
    pos_end = sat_state == SATURATED_POSITIVE_END
    if pos_end.any():
        saturation_dropped += float(neg_shares[pos_end].sum())
        neg_shares[pos_end] = 0.0

    return pos_shares + neg_shares, float(r_bias.sum()), saturation_dropped, unattributed


def _contrastive_unit_shares(contribs, bias, r_yp, r_yn):
    """Dual-channel distribution for a batch of units.

    The channel receiving each side is picked by the sign of the unit's net
    total and by which incoming channel dominates; share denominators use
    magnitudes so channel entries stay non-negative.
    Returns (rp_shares, rn_shares, unattributed).
    """
    pos = np.where(contribs > 0, contribs, 0.0)
    neg = np.where(contribs < 0, -contribs, 0.0)
    x_p = pos.sum(axis=1)
    x_n_mag = neg.sum(axis=1)
    total = x_p - x_n_mag + bias
    prefer_p = r_yp > r_yn
    polarity_plus = np.where(total > 0, prefer_p, ~prefer_p)
    r_major = np.where(polarity_plus, r_yp, r_yn)  # rides the positive side
    r_minor = np.where(polarity_plus, r_yn, r_yp)  # rides the negative side

    pos_mass = _safe_frac(pos, x_p) * r_major[:, None]
    neg_mass = _safe_frac(neg, x_n_mag) * r_minor[:, None]
    rp_shares = np.where(polarity_plus[:, None], pos_mass, neg_mass)
    rn_shares = np.where(polarity_plus[:, None], neg_mass, pos_mass)
    unattributed = float(r_major[x_p <= 0].sum() + r_minor[x_n_mag <= 0].sum())
    return rp_shares, rn_shares, unattributed


# ---------------------------------------------------------------------------
# per-kind rules
# ---------------------------------------------------------------------------


@dataclass
class PropagationLedger:
    bias_absorbed: float = 0.0
    saturation_dropped: float = 0.0
    unattributed: float = 0.0

    def merge(self, other):
        self.bias_absorbed += other.bias_absorbed
        self.saturation_dropped += other.saturation_dropped
        self.unattributed += other.unattributed
        return self


def _pair(incoming):
    if isinstance(incoming, tuple):
        return incoming
    raise ShapeMismatch("contrastive propagation expects an (r_p, r_n) pair")


def _dense_backward(W, b, x, pre, act_desc, incoming, mode):
    """Core dense rule over (..., n_in) inputs; returns (input_rel, ledger)."""
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n_out, n_in = W.shape
    rows = np.asarray(x, dtype=np.float64).reshape(-1, n_in)
    n_rows = rows.shape[0]
    contribs = (W[None, :, :] * rows[:, None, :]).reshape(n_rows * n_out, n_in)
    bias = np.tile(b, n_rows)
    ledger = PropagationLedger()
    if mode == "default":
        r = np.asarray(incoming, dtype=np.float64).reshape(-1)
        if act_desc is not None and pre is not None:
            sat = act_desc.saturation_state(
                np.asarray(pre, dtype=np.float64).reshape(-1)
            )
        else:
            sat = np.zeros(r.shape, dtype=np.int8)
        shares, ba, sd, un = _default_unit_shares(contribs, bias, r, sat)
        ledger.bias_absorbed += ba
        ledger.saturation_dropped += sd
        ledger.unattributed += un
        rel = shares.reshape(n_rows, n_out, n_in).sum(axis=1)
        return rel.reshape(np.asarray(x).shape), ledger
    r_p, r_n = _pair(incoming)
    rp = np.asarray(r_p, dtype=np.float64).reshape(-1)
    rn = np.asarray(r_n, dtype=np.float64).reshape(-1)
    rp_shares, rn_shares, un = _contrastive_unit_shares(contribs, bias, rp, rn)
    ledger.unattributed += un
    shape = np.asarray(x).shape
    rel_p = rp_shares.reshape(n_rows, n_out, n_in).sum(axis=1).reshape(shape)
    rel_n = rn_shares.reshape(n_rows, n_out, n_in).sum(axis=1).reshape(shape)
    return (rel_p, rel_n), ledger


def _per_channel(incoming, mode, fn):
    """Apply an index-remapping rule to one tensor or to both channels."""
    if mode == "default":
        return fn(incoming)
    r_p, r_n = _pair(incoming)
    return (fn(r_p), fn(r_n))


def _zeros_like_output(trace_entry, mode):
    base = np.zeros(trace_entry.output.shape, dtype=np.float64)
    return base if mode == "default" else (base, base.copy())


def _accumulate(store, key, value, mode):
    if key not in store:
        store[key] = value if mode == "default" else (value[0], value[1])
        return
    if mode == "default":
        store[key] = store[key] + value
    else:
        store[key] = (store[key][0] + value[0], store[key][1] + value[1])


def propagate_default_dense(model, node_id, trace, incoming):
    node = model.node_by_id[node_id]
    entry = trace[node_id]
    rel, ledger = _dense_backward(
        node.params["W"], node.params["b"], entry.inputs[0], entry.pre_activation,
        model.effective_activation(node_id), np.asarray(incoming, dtype=np.float64),
        "default",
    )
    return rel, ledger


def propagate_contrastive_dense(model, node_id, trace, incoming_rp, incoming_rn):
    node = model.node_by_id[node_id]
    entry = trace[node_id]
    (rel_p, rel_n), ledger = _dense_backward(
        node.params["W"], node.params["b"], entry.inputs[0], entry.pre_activation,
        model.effective_activation(node_id), (incoming_rp, incoming_rn), "contrastive",
    )
    return rel_p, rel_n, ledger


def propagate_conv2d(model, node_id, trace, incoming, mode="default"):
    """Treat each output pixel as a dense unit over its receptive field."""
    node = model.node_by_id[node_id]
    entry = trace[node_id]
    x = np.asarray(entry.inputs[0], dtype=np.float64)
    kernel = np.asarray(node.params["W"], dtype=np.float64)
    b = np.asarray(node.params["b"], dtype=np.float64)
    kh, kw, cin, cout = kernel.shape
    sh, sw = _norm_pair(node.attrs.get("stride", 1), "stride", node_id)
    padding = node.attrs.get("padding", "valid")
    cols, pads, Ho, Wo = im2col(x, kh, kw, sh, sw, padding)
    P, K = Ho * Wo, kh * kw * cin
    patches = cols.reshape(P, K)
    kflat = kernel.reshape(K, cout).T  # (cout, K): row o = unit o's weights
    contribs = (patches[:, None, :] * kflat[None, :, :]).reshape(P * cout, K)
    bias = np.tile(b, P)
    ledger = PropagationLedger()

    def scatter(patch_rel):
        padded = np.zeros(
            (x.shape[0] + sum(pads[0]), x.shape[1] + sum(pads[1]), cin), dtype=np.float64
        )
        blocks = patch_rel.reshape(Ho, Wo, kh, kw, cin)
        for i in range(kh):
            for j in range(kw):
                padded[i : i + Ho * sh : sh, j : j + Wo * sw : sw, :] += blocks[:, :, i, j, :]
        return padded[pads[0][0] : pads[0][0] + x.shape[0],
                      pads[1][0] : pads[1][0] + x.shape[1], :]

    if mode == "default":
        r = np.asarray(incoming, dtype=np.float64).reshape(-1)
        act = model.effective_activation(node_id)
        if act is not None:
            sat = act.saturation_state(
                np.asarray(entry.pre_activation, dtype=np.float64).reshape(-1)
            )
        else:
            sat = np.zeros(r.shape, dtype=np.int8)
        shares, ba, sd, un = _default_unit_shares(contribs, bias, r, sat)
        ledger.bias_absorbed += ba
        ledger.saturation_dropped += sd
        ledger.unattributed += un
        patch_rel = shares.reshape(P, cout, K).sum(axis=1)
        return scatter(patch_rel), ledger
    r_p, r_n = _pair(incoming)
    rp_shares, rn_shares, un = _contrastive_unit_shares(
        contribs, bias,
        np.asarray(r_p, dtype=np.float64).reshape(-1),
        np.asarray(r_n, dtype=np.float64).reshape(-1),
    )
    ledger.unattributed += un
    rel_p = scatter(rp_shares.reshape(P, cout, K).sum(axis=1))
    rel_n = scatter(rn_shares.reshape(P, cout, K).sum(axis=1))
    return (rel_p, rel_n), ledger


def _elementwise_units(arrays, incoming, mode):
    """Treat aligned elements of several arrays as one unit's contributions."""
    stacked = np.stack([np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays], axis=1)
    bias = np.zeros(stacked.shape[0])
    ledger = PropagationLedger()
    shape = np.asarray(arrays[0]).shape
    if mode == "default":
        r = np.asarray(incoming, dtype=np.float64).reshape(-1)
        sat = np.zeros(r.shape, dtype=np.int8)
        shares, ba, sd, un = _default_unit_shares(stacked, bias, r, sat)
        ledger.bias_absorbed += ba
        ledger.saturation_dropped += sd
        ledger.unattributed += un
        return [shares[:, k].reshape(shape) for k in range(len(arrays))], ledger
    r_p, r_n = _pair(incoming)
    rp_shares, rn_shares, un = _contrastive_unit_shares(
        stacked, bias,
        np.asarray(r_p, dtype=np.float64).reshape(-1),
        np.asarray(r_n, dtype=np.float64).reshape(-1),
    )
    ledger.unattributed += un
    return [
        (rp_shares[:, k].reshape(shape), rn_shares[:, k].reshape(shape))
        for k in range(len(arrays))
    ], ledger


def propagate_structural(model, node_id, trace, incoming, mode="default"):
    """Rules for pooling, reshaping, merging, embedding, layernorm, softmax."""
    node = model.node_by_id[node_id]
    entry = trace[node_id]
    kind = node.kind
    ledger = PropagationLedger()

    if kind in ("softmax", "activation"):
        return [_per_channel(incoming, mode, np.copy)], ledger

    if kind == "flatten":
        shape = entry.inputs[0].shape
        return [_per_channel(incoming, mode, lambda r: r.reshape(shape))], ledger

    if kind == "concat":
        axis = node.attrs.get("axis", -1)
        sizes = np.cumsum([arr.shape[axis] for arr in entry.inputs[:-1]])
        if mode == "default":
            parts = np.split(np.asarray(incoming, dtype=np.float64), sizes, axis=axis)
            return list(parts), ledger
        r_p, r_n = _pair(incoming)
        parts_p = np.split(np.asarray(r_p, dtype=np.float64), sizes, axis=axis)
        parts_n = np.split(np.asarray(r_n, dtype=np.float64), sizes, axis=axis)
        return list(zip(parts_p, parts_n)), ledger

    if kind == "add":
        return _elementwise_units(entry.inputs, incoming, mode)

    if kind == "maxpool2d":
        x = np.asarray(entry.inputs[0], dtype=np.float64)
        kh, kw = _norm_pair(node.attrs["window"], "window", node_id)
        sh, sw = _norm_pair(node.attrs.get("stride", (kh, kw)), "stride", node_id)
        cols, _, Ho, Wo = im2col(x, kh, kw, sh, sw, "valid")
        C = x.shape[2]
        windows = cols.reshape(Ho * Wo, kh * kw, C)
        winner = windows.argmax(axis=1)  # first max wins: lowest flat window index
        oh, ow = np.divmod(np.arange(Ho * Wo), Wo)
        wi, wj = np.divmod(winner, kw)
        rows = oh[:, None] * sh + wi
        cols_idx = ow[:, None] * sw + wj
        chan = np.broadcast_to(np.arange(C), (Ho * Wo, C))

        def route(r):
            rel = np.zeros_like(x)
            np.add.at(rel, (rows, cols_idx, chan), np.asarray(r, dtype=np.float64).reshape(Ho * Wo, C))
            return rel

        return [_per_channel(incoming, mode, route)], ledger

    if kind == "avgpool2d":
        x = np.asarray(entry.inputs[0], dtype=np.float64)
        kh, kw = _norm_pair(node.attrs["window"], "window", node_id)
        sh, sw = _norm_pair(node.attrs.get("stride", (kh, kw)), "stride", node_id)
        Ho = (x.shape[0] - kh) // sh + 1
        Wo = (x.shape[1] - kw) // sw + 1

        def route(r):
            r = np.asarray(r, dtype=np.float64) / (kh * kw)
            rel = np.zeros_like(x)
            for i in range(kh):
                for j in range(kw):
                    rel[i : i + Ho * sh : sh, j : j + Wo * sw : sw, :] += r
            return rel

        return [_per_channel(incoming, mode, route)], ledger

    if kind == "embedding":
        return [_per_channel(incoming, mode, lambda r: np.asarray(r, dtype=np.float64).sum(axis=-1))], ledger

    if kind == "layernorm":
        x = np.asarray(entry.inputs[0], dtype=np.float64)
        gamma = np.asarray(node.params["gamma"], dtype=np.float64)
        beta = np.asarray(node.params["beta"], dtype=np.float64)
        mu = entry.extras["mu"]
        sigma = entry.extras["sigma"]
        scale = gamma / sigma  # per-unit weight with mu, sigma held constant
        contribs = (scale * x).reshape(-1, 1)
        bias = np.broadcast_to(beta - gamma * mu / sigma, x.shape).reshape(-1)
        if mode == "default":
            r = np.asarray(incoming, dtype=np.float64).reshape(-1)
            sat = np.zeros(r.shape, dtype=np.int8)
            shares, ba, sd, un = _default_unit_shares(contribs, bias, r, sat)
            ledger.bias_absorbed += ba
            ledger.saturation_dropped += sd
            ledger.unattributed += un
            return [shares.reshape(x.shape)], ledger
        r_p, r_n = _pair(incoming)
        rp_shares, rn_shares, un = _contrastive_unit_shares(
            contribs, bias,
            np.asarray(r_p, dtype=np.float64).reshape(-1),
            np.asarray(r_n, dtype=np.float64).reshape(-1),
        )
        ledger.unattributed += un
        return [(rp_shares.reshape(x.shape), rn_shares.reshape(x.shape))], ledger

    raise ShapeMismatch(f"node {node_id!r}: no structural rule for kind {kind!r}")


def _attn_mix(r_o, attn, x_q, x_k, x_v):
    """Relevance of queries, keys and values for one head.

    Products follow the shapes: the attention matrix and the value tensor
    are the two factors of the head output, and the score matrix is the
    product of queries with transposed keys; each factor's relevance is the
    counter-factor-aligned matrix product, scaled elementwise by the factor
    itself.
    """
    r_qk = (r_o @ x_v.T) * attn
    r_v = (attn.T @ r_o) * x_v
    r_q = (r_qk @ x_k) * x_q
    r_k = (r_qk.T @ x_q) * x_k
    return r_q, r_k, r_v


def propagate_attention(model, node_id, trace, incoming, mode="default"):
    """Route relevance through a multi-head attention block.

    The output projection and the three input projections use the dense
    rule; between them the per-head mixing above applies (per channel in
    contrastive mode).  Returns (block_input_relevance, ledger).
    """
    node = model.node_by_id[node_id]
    entry = trace[node_id]
    for key in _MHA_EXTRAS:
        if key not in entry.extras:
            raise IncompleteTrace(f"node {node_id!r}: trace lacks attention tensor {key}")
    ex = {k: np.asarray(entry.extras[k], dtype=np.float64) for k in _MHA_EXTRAS}
    x = np.asarray(entry.inputs[0], dtype=np.float64)
    heads = node.attrs["head_count"]
    T, d = ex["x_Q"].shape
    dk = d // heads

    r_o, ledger = _dense_backward(
        node.params["W_O"], node.params["b_O"], ex["x_O_in"], None, None, incoming, mode
    )

    def mix(channel):
        r_q = np.empty((T, heads, dk))
        r_k = np.empty((T, heads, dk))
        r_v = np.empty((T, heads, dk))
        co = channel.reshape(T, heads, dk)
        for h in range(heads):
            r_q[:, h], r_k[:, h], r_v[:, h] = _attn_mix(
                co[:, h],
                ex["x_QK"][h],
                ex["x_Q"].reshape(T, heads, dk)[:, h],
                ex["x_K"].reshape(T, heads, dk)[:, h],
                ex["x_V"].reshape(T, heads, dk)[:, h],
            )
        return r_q.reshape(T, d), r_k.reshape(T, d), r_v.reshape(T, d)

    if mode == "default":
        r_q, r_k, r_v = mix(r_o)
        per_proj = [("W_Q", "b_Q", r_q), ("W_K", "b_K", r_k), ("W_V", "b_V", r_v)]
        total = np.zeros_like(x)
        for wname, bname, rel in per_proj:
            back, sub = _dense_backward(
                node.params[wname], node.params[bname], x, None, None, rel, "default"
            )
            total += back
            ledger.merge(sub)
        return total, ledger

    rq_p, rk_p, rv_p = mix(r_o[0])
    rq_n, rk_n, rv_n = mix(r_o[1])
    total_p = np.zeros_like(x)
    total_n = np.zeros_like(x)
    for wname, bname, rel_pair in (
        ("W_Q", "b_Q", (rq_p, rq_n)),
        ("W_K", "b_K", (rk_p, rk_n)),
        ("W_V", "b_V", (rv_p, rv_n)),
    ):
        (back_p, back_n), sub = _dense_backward(
            node.params[wname], node.params[bname], x, None, None, rel_pair, "contrastive"
        )
        total_p += back_p
        total_n += back_n
        ledger.merge(sub)
    return (total_p, total_n), ledger


def _propagate_node(model, node: NodeSpec, trace, incoming, mode):
    """Dispatch to the node's rule; returns (per-slot relevance, ledger)."""
    if node.kind == "dense":
        entry = trace[node.id]
        rel, ledger = _dense_backward(
            node.params["W"], node.params["b"], entry.inputs[0], entry.pre_activation,
            model.effective_activation(node.id), incoming, mode,
        )
        return [rel], ledger
    if node.kind == "conv2d":
        rel, ledger = propagate_conv2d(model, node.id, trace, incoming, mode)
        return [rel], ledger
    if node.kind == "mha":
        rel, ledger = propagate_attention(model, node.id, trace, incoming, mode)
        return [rel], ledger
    return propagate_structural(model, node.id, trace, incoming, mode)


# ---------------------------------------------------------------------------
# walking the graph
# ---------------------------------------------------------------------------


@dataclass
class StartSpec:
    """Where and how much relevance enters at the root.

    ``target_unit`` is a flat index into the root output, or ``"argmax"``.
    In contrastive mode the supporting channel starts with the same vector;
    the detracting channel starts at zero, or spread uniformly over the
    non-target units when ``contrastive_negative_init`` says so.
    """

    target_unit: int | str = "argmax"
    start_scale: float = 1.0
    contrastive_negative_init: str = "zeros"

    def __post_init__(self):
        if not self.start_scale > 0:
            raise ValueError("start_scale must be > 0")
        if self.contrastive_negative_init not in ("zeros", "uniform_over_nontarget"):
            raise ValueError("contrastive_negative_init must be zeros|uniform_over_nontarget")
        if isinstance(self.target_unit, str) and self.target_unit != "argmax":
            raise ValueError("target_unit must be an int or 'argmax'")

    def resolve_target(self, root_output) -> int:
        n = int(np.prod(root_output.shape))
        if self.target_unit == "argmax":
            return int(np.argmax(np.asarray(root_output).reshape(-1)))
        target = int(self.target_unit)
        if not 0 <= target < n:
            raise ShapeMismatch(f"target unit {target} outside output of size {n}")
        return target

    def build(self, root_output, mode):
        target = self.resolve_target(root_output)
        base = np.zeros(np.asarray(root_output).shape, dtype=np.float64)
        base.reshape(-1)[target] = self.start_scale
        if mode == "default":
            return base
        negative = np.zeros_like(base)
        n = base.size
        if self.contrastive_negative_init == "uniform_over_nontarget" and n > 1:
            negative += self.start_scale / (n - 1)
            negative.reshape(-1)[target] = 0.0
        return base, negative


@dataclass
class RelevanceMap:
    """Relevance received at every node, plus the mass ledger."""

    mode: str
    input_ids: tuple
    node_relevance: dict = field(default_factory=dict)
    bias_absorbed: dict = field(default_factory=dict)
    saturation_dropped: dict = field(default_factory=dict)
    node_unattributed: dict = field(default_factory=dict)
    target_unit: int = 0
    start_scale: float = 1.0

    @property
    def unattributed(self) -> float:
        return sum(self.node_unattributed.values())

    @property
    def total_bias_absorbed(self) -> float:
        return sum(self.bias_absorbed.values())

    @property
    def total_saturation_dropped(self) -> float:
        return sum(self.saturation_dropped.values())

    def leaf_relevance(self):
        return {leaf: self.node_relevance[leaf] for leaf in self.input_ids}

    def leaf_vector(self):
        """Flattened leaf relevance; a (supporting, detracting) pair in
        contrastive mode."""
        if self.mode == "default":
            return np.concatenate(
                [np.asarray(self.node_relevance[leaf]).reshape(-1) for leaf in self.input_ids]
            )
        vp = np.concatenate(
            [np.asarray(self.node_relevance[leaf][0]).reshape(-1) for leaf in self.input_ids]
        )
        vn = np.concatenate(
            [np.asarray(self.node_relevance[leaf][1]).reshape(-1) for leaf in self.input_ids]
        )
        return vp, vn

    def conservation_total(self) -> float:
        """Leaf mass plus everything the ledger retained (default mode)."""
        leaves = float(sum(np.asarray(self.node_relevance[l]).sum() for l in self.input_ids))
        return (
            leaves
            + self.total_bias_absorbed
            + self.total_saturation_dropped
            + self.unattributed
        )


def backtrace(model: GraphModel, trace: ActivationTrace, start: StartSpec | None = None,
              mode: str = "default") -> RelevanceMap:
    """Propagate relevance from the root to every leaf of a traced model.

    Nodes are visited in reverse topological order; a node's incoming
    relevance is the sum of what all of its consumers routed to it, so
    graphs with skip connections account fan-out exactly once.
    """
    if mode not in ("default", "contrastive"):
        raise ValueError(f"unknown mode {mode!r}")
    start = start or StartSpec()
    for nid in model.topo_order:
        if nid not in trace:
            raise IncompleteTrace(f"trace has no entry for node {nid!r}")

    root_entry = trace[model.output_id]
    rmap = RelevanceMap(mode=mode, input_ids=model.input_ids,
                        start_scale=start.start_scale,
                        target_unit=start.resolve_target(root_entry.output))
    pending: dict = {model.output_id: start.build(root_entry.output, mode)}

    for nid in reversed(model.topo_order):
        node = model.node_by_id[nid]
        incoming = pending.pop(nid, None)
        if incoming is None:
            incoming = _zeros_like_output(trace[nid], mode)
        rmap.node_relevance[nid] = incoming
        if node.kind == "input":
            continue
        slots, ledger = _propagate_node(model, node, trace, incoming, mode)
        rmap.bias_absorbed[nid] = ledger.bias_absorbed
        rmap.saturation_dropped[nid] = ledger.saturation_dropped
        rmap.node_unattributed[nid] = ledger.unattributed
        for producer, rel in zip(model.producers[nid], slots):
            _accumulate(pending, producer, rel, mode)
    return rmap


def global_importance(relevance_maps, outcomes):
    """Average leaf relevance over samples, normalized by each outcome.

    Each sample's leaf vector is divided by the magnitude of its model
    outcome; samples with an outcome of zero are skipped with a warning.
    Contrastive maps aggregate the net supporting-minus-detracting vector.
    """
    maps = list(relevance_maps)
    outcomes = [float(o) for o in outcomes]
    if not maps:
        raise EmptyInput("no relevance maps to aggregate")
    if len(maps) != len(outcomes):
        raise ValueError(f"{len(maps)} maps vs {len(outcomes)} outcomes")
    rows = []
    skipped = 0
    for rmap, outcome in zip(maps, outcomes):
        if abs(outcome) <= 1e-12:
            skipped += 1
            continue
        vec = rmap.leaf_vector()
        if rmap.mode == "contrastive":
            vec = vec[0] - vec[1]
        rows.append(vec / abs(outcome))
    if skipped:
        warnings.warn(f"global_importance: skipped {skipped} zero-outcome samples")
    if not rows:
        raise EmptyInput("all samples had zero outcomes")
    return np.mean(np.stack(rows), axis=0)
