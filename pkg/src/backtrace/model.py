"""In-memory computation graph: node specs, validation, topology, shapes.

A ``GraphModel`` is immutable after construction and safe to share across
threads.  Construction validates everything up front: node kinds, required
parameters and their shapes, edge/slot structure, acyclicity, reachability
from the single root, and static tensor shapes along every path.  A model
that constructs is a model the forward engine can run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationDesc, make_desc
from .errors import DanglingEdge, MalformedManifest, ShapeMismatch, UnknownKind

WEIGHT_ALIGNMENT = 64

# Per-kind signature: canonical parameter order (also the save order), the
# attribute keys accepted, and the input-slot arity (min, max).
KIND_PARAMS = {
    "input": (),
    "dense": ("W", "b"),
    "conv2d": ("W", "b"),
    "maxpool2d": (),
    "avgpool2d": (),
    "flatten": (),
    "add": (),
    "concat": (),
    "embedding": ("table",),
    "layernorm": ("gamma", "beta"),
    "softmax": (),
    "mha": ("W_Q", "b_Q", "W_K", "b_K", "W_V", "b_V", "W_O", "b_O"),
    "activation": (),
}

KIND_ATTRS = {
    "input": {"shape", "dtype"},
    "dense": set(),
    "conv2d": {"stride", "padding"},
    "maxpool2d": {"window", "stride"},
    "avgpool2d": {"window", "stride"},
    "flatten": set(),
    "add": set(),
    "concat": {"axis"},
    "embedding": set(),
    "layernorm": {"epsilon"},
    "softmax": {"axis"},
    "mha": {"head_count"},
    "activation": {"name", "monotonic", "lower_sat", "upper_sat"},
}

KIND_ARITY = {
    "input": (0, 0),
    "dense": (1, 1),
    "conv2d": (1, 1),
    "maxpool2d": (1, 1),
    "avgpool2d": (1, 1),
    "flatten": (1, 1),
    "add": (2, 8),
    "concat": (2, 8),
    "embedding": (1, 1),
    "layernorm": (1, 1),
    "softmax": (1, 1),
    "mha": (1, 1),
    "activation": (1, 1),
}

KINDS = tuple(KIND_PARAMS)

# Kinds whose relevance rule needs a fused activation: only these may carry
# an ActivationDesc directly.
FUSABLE_KINDS = ("dense", "conv2d")


@dataclass(frozen=True)
class ParamRef:
    """Location of one parameter inside the weights blob."""

    dtype: str
    shape: tuple[int, ...]
    offset: int
    length: int

    def __post_init__(self):
        if self.dtype != "f32":
            raise MalformedManifest(f"unsupported param dtype {self.dtype!r}")
        if any(int(d) <= 0 for d in self.shape):
            raise MalformedManifest(f"non-positive param dimension in {self.shape}")
        expected = 4 * int(np.prod(self.shape))
        if self.length != expected:
            raise MalformedManifest(
                f"param length {self.length} != 4*prod(shape) = {expected}"
            )
        if self.offset % WEIGHT_ALIGNMENT != 0:
            raise MalformedManifest(
                f"param offset {self.offset} not {WEIGHT_ALIGNMENT}-byte aligned"
            )


@dataclass(frozen=True)
class NodeSpec:
    """One graph node with materialized parameters."""

    id: str
    kind: str
    params: dict = field(default_factory=dict)
    attrs: dict = field(default_factory=dict)
    activation: ActivationDesc | None = None


def _norm_pair(value, what, node_id):
    """Normalize an int-or-pair attribute to a (h, w) tuple of positive ints."""
    if isinstance(value, bool):
        raise MalformedManifest(f"node {node_id!r}: {what} must be int or pair")
    if isinstance(value, int):
        value = (value, value)
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in value)
    ):
        raise MalformedManifest(f"node {node_id!r}: {what} must be a positive int or pair")
    return tuple(value)


class GraphModel:
    """Validated, immutable computation graph.

    Attributes of interest:
        nodes: node specs in declaration order.
        edges: (producer_id, consumer_id, slot) triples.
        input_ids / output_id: ordered leaves and the single root.
        topo_order: node ids, topologically sorted with declaration-index
            tie-breaking, so identical manifests always yield the same order.
        shapes / dtypes: statically inferred output shape and dtype per node.
    """

    def __init__(self, format_version, nodes, edges, input_ids, output_id):
        self.format_version = int(format_version)
        self.nodes = tuple(nodes)
        self.edges = tuple((str(p), str(c), int(s)) for p, c, s in edges)
        self.input_ids = tuple(str(i) for i in input_ids)
        self.output_id = str(output_id)

        self.node_by_id = {}
        self._decl_index = {}
        for i, node in enumerate(self.nodes):
            if node.id in self.node_by_id:
                raise MalformedManifest(f"duplicate node id {node.id!r}")
            self.node_by_id[node.id] = node
            self._decl_index[node.id] = i

        self._validate_nodes()
        self._build_topology()
        self._infer_shapes()
        self._effective_activation = self._resolve_effective_activations()

    # -- structure ---------------------------------------------------------

    def _validate_nodes(self):
        if not self.nodes:
            raise MalformedManifest("model has no nodes")
        for node in self.nodes:
            if node.kind not in KINDS:
                raise UnknownKind(f"node {node.id!r}: unknown kind {node.kind!r}")
            required = KIND_PARAMS[node.kind]
            missing = [p for p in required if p not in node.params]
            extra = [p for p in node.params if p not in required]
            if missing:
                raise MalformedManifest(f"node {node.id!r}: missing params {missing}")
            if extra:
                raise MalformedManifest(f"node {node.id!r}: unexpected params {extra}")
            allowed = KIND_ATTRS[node.kind]
            unknown = [a for a in node.attrs if a not in allowed]
            if unknown:
                raise MalformedManifest(f"node {node.id!r}: unexpected attrs {unknown}")
            if node.activation is not None and node.kind not in FUSABLE_KINDS:
                raise MalformedManifest(
                    f"node {node.id!r}: activation only allowed on {FUSABLE_KINDS}"
                )
            for name, value in node.params.items():
                if not isinstance(value, np.ndarray) or value.dtype != np.float32:
                    raise MalformedManifest(
                        f"node {node.id!r}: param {name!r} must be float32 ndarray"
                    )
            self._validate_param_shapes(node)

    def _validate_param_shapes(self, node):
        p = node.params
        nid = node.id
        if node.kind == "dense":
            if p["W"].ndim != 2:
                raise ShapeMismatch(f"node {nid!r}: dense W must be 2-D (out, in)")
            if p["b"].shape != (p["W"].shape[0],):
                raise ShapeMismatch(f"node {nid!r}: dense b must have shape (out,)")
        elif node.kind == "conv2d":
            if p["W"].ndim != 4:
                raise ShapeMismatch(f"node {nid!r}: conv W must be (kh, kw, cin, cout)")
            if p["b"].shape != (p["W"].shape[3],):
                raise ShapeMismatch(f"node {nid!r}: conv b must have shape (cout,)")
        elif node.kind == "embedding":
            if p["table"].ndim != 2:
                raise ShapeMismatch(f"node {nid!r}: embedding table must be 2-D")
        elif node.kind == "layernorm":
            if p["gamma"].ndim != 1 or p["gamma"].shape != p["beta"].shape:
                raise ShapeMismatch(f"node {nid!r}: gamma/beta must be matching 1-D")
        elif node.kind == "mha":
            d = p["W_Q"].shape[0] if p["W_Q"].ndim == 2 else -1
            for w in ("W_Q", "W_K", "W_V", "W_O"):
                if p[w].shape != (d, d) or d <= 0:
                    raise ShapeMismatch(f"node {nid!r}: {w} must be square (d, d)")
            for b in ("b_Q", "b_K", "b_V", "b_O"):
                if p[b].shape != (d,):
                    raise ShapeMismatch(f"node {nid!r}: {b} must have shape (d,)")
            heads = node.attrs.get("head_count")
            if not isinstance(heads, int) or isinstance(heads, bool) or heads < 1:
                raise MalformedManifest(f"node {nid!r}: head_count must be a positive int")
            if d % heads != 0:
                raise ShapeMismatch(f"node {nid!r}: head_count {heads} must divide d={d}")
        elif node.kind == "input":
            shape = node.attrs.get("shape")
            if (
                not isinstance(shape, (list, tuple))
                or not shape
                or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in shape)
            ):
                raise MalformedManifest(f"node {nid!r}: input shape must be positive ints")
            dtype = node.attrs.get("dtype", "f32")
            if dtype not in ("f32", "token_id"):
                raise MalformedManifest(f"node {nid!r}: input dtype must be f32 or token_id")
        elif node.kind == "activation":
            name = node.attrs.get("name")
            if not isinstance(name, str):
                raise MalformedManifest(f"node {nid!r}: activation node needs a name attr")
            make_desc(
                name,
                monotonic=node.attrs.get("monotonic"),
                lower_sat=node.attrs.get("lower_sat", "default"),
                upper_sat=node.attrs.get("upper_sat", "default"),
            )

    def _build_topology(self):
        ids = set(self.node_by_id)
        for producer, consumer, slot in self.edges:
            if producer not in ids:
                raise DanglingEdge(f"edge references unknown producer {producer!r}")
            if consumer not in ids:
                raise DanglingEdge(f"edge references unknown consumer {consumer!r}")
            if slot < 0:
                raise MalformedManifest(f"negative input slot on edge into {consumer!r}")

        # producers[consumer] = producer id per slot, densely indexed.
        slot_map: dict[str, dict[int, str]] = {n.id: {} for n in self.nodes}
        consumers: dict[str, list[tuple[str, int]]] = {n.id: [] for n in self.nodes}
        for producer, consumer, slot in self.edges:
            if slot in slot_map[consumer]:
                raise MalformedManifest(
                    f"node {consumer!r}: duplicate edge into slot {slot}"
                )
            slot_map[consumer][slot] = producer
            consumers[producer].append((consumer, slot))

        self.producers: dict[str, tuple[str, ...]] = {}
        for node in self.nodes:
            lo, hi = KIND_ARITY[node.kind]
            slots = slot_map[node.id]
            n = len(slots)
            if n < lo or n > hi:
                raise MalformedManifest(
                    f"node {node.id!r} ({node.kind}) takes {lo}..{hi} inputs, got {n}"
                )
            if sorted(slots) != list(range(n)):
                raise MalformedManifest(
                    f"node {node.id!r}: input slots must be contiguous from 0"
                )
            self.producers[node.id] = tuple(slots[i] for i in range(n))
        self.consumers = {k: tuple(sorted(v, key=lambda cs: (self._decl_index[cs[0]], cs[1])))
                          for k, v in consumers.items()}

        if self.output_id not in ids:
            raise DanglingEdge(f"output_id {self.output_id!r} is not a node")
        if self.consumers[self.output_id]:
            raise DanglingEdge(f"root {self.output_id!r} must not feed other nodes")

        declared_inputs = list(self.input_ids)
        actual_inputs = [n.id for n in self.nodes if n.kind == "input"]
        if sorted(declared_inputs) != sorted(actual_inputs):
            raise MalformedManifest(
                f"input_ids {declared_inputs} do not match input nodes {actual_inputs}"
            )
        if len(set(declared_inputs)) != len(declared_inputs):
            raise MalformedManifest("input_ids contains duplicates")

        # Kahn's algorithm; ready set ordered by declaration index so the
        # topological order is a pure function of the manifest.
        indegree = {n.id: len(self.producers[n.id]) for n in self.nodes}
        ready = sorted((i for i in indegree if indegree[i] == 0), key=self._decl_index.get)
        order = []
        while ready:
            nid = ready.pop(0)
            order.append(nid)
            changed = False
            for consumer, _slot in self.consumers[nid]:
                indegree[consumer] -= 1
                if indegree[consumer] == 0:
                    ready.append(consumer)
                    changed = True
            if changed:
                ready.sort(key=self._decl_index.get)
        if len(order) != len(self.nodes):
            stuck = sorted(i for i in indegree if indegree[i] > 0)
            raise DanglingEdge(f"graph contains a cycle through {stuck}")
        self.topo_order = tuple(order)

        # Every node must reach the root by following consumer edges.
        reachable = {self.output_id}
        stack = [self.output_id]
        while stack:
            nid = stack.pop()
            for producer in self.producers[nid]:
                if producer not in reachable:
                    reachable.add(producer)
                    stack.append(producer)
        orphans = sorted(ids - reachable)
        if orphans:
            raise DanglingEdge(f"nodes unreachable from root: {orphans}")

    # -- static shapes -----------------------------------------------------

    def _infer_shapes(self):
        self.shapes: dict[str, tuple[int, ...]] = {}
        self.dtypes: dict[str, str] = {}
        for nid in self.topo_order:
            node = self.node_by_id[nid]
            in_shapes = [self.shapes[p] for p in self.producers[nid]]
            in_dtypes = [self.dtypes[p] for p in self.producers[nid]]
            if node.kind != "embedding" and any(d == "token_id" for d in in_dtypes):
                raise ShapeMismatch(
                    f"node {nid!r}: token-id tensors may only feed embedding nodes"
                )
            self.shapes[nid] = self._node_output_shape(node, in_shapes)
            self.dtypes[nid] = (
                "token_id" if node.kind == "input" and node.attrs.get("dtype") == "token_id"
                else "f32"
            )

    def _node_output_shape(self, node, in_shapes):
        nid = node.id
        if node.kind == "input":
            return tuple(node.attrs["shape"])
        if node.kind == "dense":
            (s,) = in_shapes
            n_out, n_in = node.params["W"].shape
            if len(s) not in (1, 2) or s[-1] != n_in:
                raise ShapeMismatch(
                    f"node {nid!r}: dense expects (..., {n_in}), producer gives {s}"
                )
            return s[:-1] + (n_out,)
        if node.kind == "conv2d":
            (s,) = in_shapes
            kh, kw, cin, cout = node.params["W"].shape
            if len(s) != 3 or s[2] != cin:
                raise ShapeMismatch(
                    f"node {nid!r}: conv2d expects (H, W, {cin}), producer gives {s}"
                )
            sh, sw = _norm_pair(node.attrs.get("stride", 1), "stride", nid)
            padding = node.attrs.get("padding", "valid")
            if padding == "valid":
                if s[0] < kh or s[1] < kw:
                    raise ShapeMismatch(f"node {nid!r}: kernel larger than input {s}")
                out = ((s[0] - kh) // sh + 1, (s[1] - kw) // sw + 1)
            elif padding == "same":
                out = (-(-s[0] // sh), -(-s[1] // sw))
            else:
                raise MalformedManifest(f"node {nid!r}: padding must be 'valid' or 'same'")
            return (out[0], out[1], cout)
        if node.kind in ("maxpool2d", "avgpool2d"):
            (s,) = in_shapes
            if "window" not in node.attrs:
                raise MalformedManifest(f"node {nid!r}: pooling requires a window attr")
            kh, kw = _norm_pair(node.attrs["window"], "window", nid)
            sh, sw = _norm_pair(node.attrs.get("stride", (kh, kw)), "stride", nid)
            if len(s) != 3 or s[0] < kh or s[1] < kw:
                raise ShapeMismatch(f"node {nid!r}: cannot pool {s} with window {(kh, kw)}")
            return ((s[0] - kh) // sh + 1, (s[1] - kw) // sw + 1, s[2])
        if node.kind == "flatten":
            (s,) = in_shapes
            return (int(np.prod(s)),)
        if node.kind == "add":
            if len(set(in_shapes)) != 1:
                raise ShapeMismatch(f"node {nid!r}: add branches differ: {in_shapes}")
            return in_shapes[0]
        if node.kind == "concat":
            axis = node.attrs.get("axis", -1)
            if not isinstance(axis, int) or isinstance(axis, bool):
                raise MalformedManifest(f"node {nid!r}: concat axis must be int")
            ndim = len(in_shapes[0])
            ax = axis if axis >= 0 else ndim + axis
            if not 0 <= ax < ndim or any(len(s) != ndim for s in in_shapes):
                raise ShapeMismatch(f"node {nid!r}: concat shapes incompatible: {in_shapes}")
            for s in in_shapes[1:]:
                if s[:ax] != in_shapes[0][:ax] or s[ax + 1:] != in_shapes[0][ax + 1:]:
                    raise ShapeMismatch(
                        f"node {nid!r}: concat shapes incompatible: {in_shapes}"
                    )
            out = list(in_shapes[0])
            out[ax] = sum(s[ax] for s in in_shapes)
            return tuple(out)
        if node.kind == "embedding":
            (s,) = in_shapes
            producer = self.node_by_id[self.producers[nid][0]]
            if producer.kind != "input" or producer.attrs.get("dtype") != "token_id":
                raise ShapeMismatch(
                    f"node {nid!r}: embedding input must be a token_id input leaf"
                )
            if len(s) != 1:
                raise ShapeMismatch(f"node {nid!r}: token input must be 1-D, got {s}")
            return (s[0], node.params["table"].shape[1])
        if node.kind == "layernorm":
            (s,) = in_shapes
            d = node.params["gamma"].shape[0]
            if not s or s[-1] != d:
                raise ShapeMismatch(
                    f"node {nid!r}: layernorm expects (..., {d}), producer gives {s}"
                )
            eps = node.attrs.get("epsilon", 1e-5)
            if not isinstance(eps, (int, float)) or eps <= 0:
                raise MalformedManifest(f"node {nid!r}: epsilon must be positive")
            return s
        if node.kind == "softmax":
            (s,) = in_shapes
            axis = node.attrs.get("axis", -1)
            if not isinstance(axis, int) or isinstance(axis, bool):
                raise MalformedManifest(f"node {nid!r}: softmax axis must be int")
            if not -len(s) <= axis < len(s):
                raise ShapeMismatch(f"node {nid!r}: softmax axis {axis} out of range for {s}")
            return s
        if node.kind == "mha":
            (s,) = in_shapes
            d = node.params["W_Q"].shape[0]
            if len(s) != 2 or s[1] != d:
                raise ShapeMismatch(
                    f"node {nid!r}: attention expects (T, {d}), producer gives {s}"
                )
            return s
        if node.kind == "activation":
            (s,) = in_shapes
            return s
        raise UnknownKind(f"node {nid!r}: unknown kind {node.kind!r}")

    # -- relevance support ---------------------------------------------------

    def _resolve_effective_activations(self):
        """Fuse a dense/conv node with a directly chained activation node.

        A standalone activation node behaves exactly like a fused activation
        attribute when it is the sole consumer of a dense or conv2d output;
        the relevance rule then reads the saturation bounds from the chained
        node.  Activation nodes themselves pass relevance through unchanged.
        """
        eff = {}
        for node in self.nodes:
            if node.kind not in FUSABLE_KINDS:
                continue
            desc = node.activation
            if desc is None:
                cons = self.consumers[node.id]
                if len(cons) == 1:
                    follower = self.node_by_id[cons[0][0]]
                    if follower.kind == "activation":
                        desc = activation_desc_of(follower)
            eff[node.id] = desc
        return eff

    def effective_activation(self, node_id: str) -> ActivationDesc | None:
        return self._effective_activation.get(node_id)

    # -- misc ----------------------------------------------------------------

    def node_attr(self, node_id, key, default=None):
        return self.node_by_id[node_id].attrs.get(key, default)

    def with_node_params(self, node_id: str, params: dict) -> "GraphModel":
        """Return a new model with one node's parameters replaced."""
        if node_id not in self.node_by_id:
            raise MalformedManifest(f"unknown node {node_id!r}")
        nodes = []
        for node in self.nodes:
            if node.id == node_id:
                nodes.append(NodeSpec(node.id, node.kind, dict(params),
                                      dict(node.attrs), node.activation))
            else:
                nodes.append(node)
        return GraphModel(self.format_version, nodes, self.edges,
                          self.input_ids, self.output_id)


def activation_desc_of(activation_node: NodeSpec) -> ActivationDesc:
    """Descriptor for a standalone activation node, honoring overrides."""
    a = activation_node.attrs
    return make_desc(
        a["name"],
        monotonic=a.get("monotonic"),
        lower_sat=a.get("lower_sat", "default"),
        upper_sat=a.get("upper_sat", "default"),
    )


def models_equal(a: GraphModel, b: GraphModel) -> bool:
    """Structural equality, with bit-level comparison of parameters."""
    if (a.format_version, a.input_ids, a.output_id) != (b.format_version, b.input_ids, b.output_id):
        return False
    if a.edges != b.edges or len(a.nodes) != len(b.nodes):
        return False
    for na, nb in zip(a.nodes, b.nodes):
        if (na.id, na.kind, na.attrs, na.activation) != (nb.id, nb.kind, nb.attrs, nb.activation):
            return False
        if set(na.params) != set(nb.params):
            return False
        for key in na.params:
            if na.params[key].shape != nb.params[key].shape:
                return False
            if na.params[key].tobytes() != nb.params[key].tobytes():
                return False
    return True
