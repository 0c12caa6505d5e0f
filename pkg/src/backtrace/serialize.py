"""Portable model files: a strict JSON manifest plus a raw weights blob.

The manifest is UTF-8 JSON with a pinned schema (see docs/model_format.md);
unknown fields are rejected so exporter drift surfaces immediately.  The
weights blob is raw little-endian IEEE-754 binary32, row-major, with every
parameter starting on a 64-byte boundary.  Loading validates everything and
either returns a fully materialized model or raises; it never repairs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .activations import ActivationDesc, make_desc
from .errors import MalformedManifest, WeightsOverrun
from .model import KIND_PARAMS, WEIGHT_ALIGNMENT, GraphModel, NodeSpec

SUPPORTED_FORMAT_VERSIONS = (1,)

_TOP_KEYS = {"format_version", "nodes", "edges", "input_ids", "output_id"}
_NODE_KEYS = {"id", "kind", "params", "attrs", "activation"}
_PARAM_KEYS = {"dtype", "shape", "offset", "length"}
_ACTIVATION_KEYS = {"name", "monotonic", "lower_sat", "upper_sat"}


def _require_keys(obj, allowed, where, required=()):
    if not isinstance(obj, dict):
        raise MalformedManifest(f"{where}: expected a JSON object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise MalformedManifest(f"{where}: unknown fields {unknown}")
    missing = sorted(set(required) - set(obj))
    if missing:
        raise MalformedManifest(f"{where}: missing fields {missing}")


def _parse_param_ref(obj, where):
    _require_keys(obj, _PARAM_KEYS, where, required=_PARAM_KEYS)
    shape = obj["shape"]
    if not isinstance(shape, list) or not all(
        isinstance(d, int) and not isinstance(d, bool) for d in shape
    ):
        raise MalformedManifest(f"{where}: shape must be a list of ints")
    for key in ("offset", "length"):
        if not isinstance(obj[key], int) or isinstance(obj[key], bool) or obj[key] < 0:
            raise MalformedManifest(f"{where}: {key} must be a non-negative int")
    from .model import ParamRef

    return ParamRef(obj["dtype"], tuple(shape), obj["offset"], obj["length"])


def _parse_activation(obj, where) -> ActivationDesc:
    _require_keys(obj, _ACTIVATION_KEYS, where, required={"name"})
    if not isinstance(obj["name"], str):
        raise MalformedManifest(f"{where}: activation name must be a string")
    for key in ("lower_sat", "upper_sat"):
        if key in obj and obj[key] is not None and not isinstance(obj[key], (int, float)):
            raise MalformedManifest(f"{where}: {key} must be a number or null")
    if "monotonic" in obj and not isinstance(obj["monotonic"], bool):
        raise MalformedManifest(f"{where}: monotonic must be a bool")
    return make_desc(
        obj["name"],
        monotonic=obj.get("monotonic"),
        lower_sat=obj.get("lower_sat", "default"),
        upper_sat=obj.get("upper_sat", "default"),
    )


def _materialize(ref, weights, where, claimed):
    if ref.offset + ref.length > len(weights):
        raise WeightsOverrun(
            f"{where}: [{ref.offset}, {ref.offset + ref.length}) overruns "
            f"{len(weights)}-byte blob"
        )
    for other_where, lo, hi in claimed:
        if ref.offset < hi and lo < ref.offset + ref.length:
            raise WeightsOverrun(f"{where}: overlaps {other_where} in the weights blob")
    claimed.append((where, ref.offset, ref.offset + ref.length))
    flat = np.frombuffer(weights, dtype="<f4", count=ref.length // 4, offset=ref.offset)
    return np.ascontiguousarray(flat.reshape(ref.shape))


def load_model(manifest_bytes: bytes, weights_bytes: bytes) -> GraphModel:
    """Parse, validate and materialize a model from its two byte blobs."""
    try:
        doc = json.loads(manifest_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedManifest(f"manifest is not valid UTF-8 JSON: {exc}") from None
    _require_keys(doc, _TOP_KEYS, "manifest", required=_TOP_KEYS)
    version = doc["format_version"]
    if version not in SUPPORTED_FORMAT_VERSIONS:
        raise MalformedManifest(f"unsupported format_version {version!r}")
    if not isinstance(doc["nodes"], list) or not doc["nodes"]:
        raise MalformedManifest("manifest: nodes must be a non-empty list")
    if not isinstance(doc["edges"], list):
        raise MalformedManifest("manifest: edges must be a list")
    if not isinstance(doc["input_ids"], list) or not isinstance(doc["output_id"], str):
        raise MalformedManifest("manifest: bad input_ids/output_id")

    claimed: list[tuple[str, int, int]] = []
    nodes = []
    for i, entry in enumerate(doc["nodes"]):
        where = f"nodes[{i}]"
        _require_keys(entry, _NODE_KEYS, where, required={"id", "kind"})
        if not isinstance(entry["id"], str) or not isinstance(entry["kind"], str):
            raise MalformedManifest(f"{where}: id and kind must be strings")
        params = {}
        for name, ref_obj in (entry.get("params") or {}).items():
            ref = _parse_param_ref(ref_obj, f"{where}.params[{name!r}]")
            params[name] = _materialize(ref, weights_bytes, f"{where}.params[{name!r}]", claimed)
        attrs = entry.get("attrs") or {}
        if not isinstance(attrs, dict):
            raise MalformedManifest(f"{where}: attrs must be an object")
        attrs = {k: (tuple(v) if isinstance(v, list) and k in ("window", "stride")
                     else v) for k, v in attrs.items()}
        if entry["kind"] == "input" and isinstance(attrs.get("shape"), list):
            attrs["shape"] = tuple(attrs["shape"])
        activation = None
        if entry.get("activation") is not None:
            activation = _parse_activation(entry["activation"], f"{where}.activation")
        nodes.append(NodeSpec(entry["id"], entry["kind"], params, attrs, activation))

    edges = []
    for i, edge in enumerate(doc["edges"]):
        if (
            not isinstance(edge, list)
            or len(edge) != 3
            or not isinstance(edge[0], str)
            or not isinstance(edge[1], str)
            or not isinstance(edge[2], int)
            or isinstance(edge[2], bool)
        ):
            raise MalformedManifest(f"edges[{i}]: expected [producer, consumer, slot]")
        edges.append((edge[0], edge[1], edge[2]))

    return GraphModel(version, nodes, edges, doc["input_ids"], doc["output_id"])


def _attrs_for_json(node: NodeSpec):
    out = {}
    for key, value in node.attrs.items():
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def save_model(model: GraphModel) -> tuple[bytes, bytes]:
    """Serialize a model to (manifest bytes, weights bytes).

    Parameters are laid out in node declaration order using each kind's
    canonical parameter order, padded to 64-byte boundaries with zeros, so
    that saving the same in-memory model always produces identical bytes.
    """
    blob = bytearray()
    node_entries = []
    for node in model.nodes:
        entry: dict = {"id": node.id, "kind": node.kind}
        if node.params:
            refs = {}
            for name in KIND_PARAMS[node.kind]:
                arr = np.ascontiguousarray(node.params[name], dtype="<f4")
                if len(blob) % WEIGHT_ALIGNMENT:
                    blob.extend(b"\x00" * (WEIGHT_ALIGNMENT - len(blob) % WEIGHT_ALIGNMENT))
                offset = len(blob)
                data = arr.tobytes()
                blob.extend(data)
                refs[name] = {
                    "dtype": "f32",
                    "shape": [int(d) for d in arr.shape],
                    "offset": offset,
                    "length": len(data),
                }
            entry["params"] = refs
        if node.attrs:
            entry["attrs"] = _attrs_for_json(node)
        if node.activation is not None:
            a = node.activation
            entry["activation"] = {
                "name": a.name,
                "monotonic": a.monotonic,
                "lower_sat": a.lower_sat,
                "upper_sat": a.upper_sat,
            }
        node_entries.append(entry)

    manifest = {
        "format_version": model.format_version,
        "nodes": node_entries,
        "edges": [[p, c, s] for p, c, s in model.edges],
        "input_ids": list(model.input_ids),
        "output_id": model.output_id,
    }
    manifest_bytes = json.dumps(manifest, indent=2).encode("utf-8") + b"\n"
    return manifest_bytes, bytes(blob)


def load_model_files(manifest_path, weights_path=None) -> GraphModel:
    """Load from ``<name>.manifest.json`` + ``<name>.weights.bin`` files."""
    manifest_path = Path(manifest_path)
    if weights_path is None:
        name = manifest_path.name
        if not name.endswith(".manifest.json"):
            raise MalformedManifest(
                f"cannot derive weights path from {manifest_path.name!r}; pass it explicitly"
            )
        weights_path = manifest_path.with_name(name[: -len(".manifest.json")] + ".weights.bin")
    return load_model(manifest_path.read_bytes(), Path(weights_path).read_bytes())


def save_model_files(model: GraphModel, directory, name: str):
    """Write ``<name>.manifest.json`` and ``<name>.weights.bin`` into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest_bytes, weights_bytes = save_model(model)
    manifest_path = directory / f"{name}.manifest.json"
    weights_path = directory / f"{name}.weights.bin"
    manifest_path.write_bytes(manifest_bytes)
    weights_path.write_bytes(weights_bytes)
    return manifest_path, weights_path
