"""Sample-file loaders, relevance exports, and PNG heatmap rendering.

Sample inputs come in three flavors:
  * ``.csv``       one tabular sample per row (optional header);
  * ``.tokens``    one sample per line of whitespace-separated token ids
    (``.txt`` accepted);
  * ``.f32``       a single raw tensor dump: magic ``BTF1``, u32 ndim,
    ndim u32 dims, then row-major little-endian float32 data
    (``.bin``/``.raw`` accepted).

The PNG writer is self-contained (zlib + fixed filter) so renders are
byte-identical across runs and platforms.
"""

from __future__ import annotations

import csv
import io
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import MalformedManifest, ShapeMismatch

RAW_MAGIC = b"BTF1"


# ---------------------------------------------------------------------------
# raw tensor dumps
# ---------------------------------------------------------------------------


def write_raw_f32(path, array):
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_raw_f32(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != RAW_MAGIC:
        raise MalformedManifest(f"{path}: not a raw f32 tensor dump (bad magic)")
    (ndim,) = struct.unpack_from("<I", data, 4)
    dims = struct.unpack_from(f"<{ndim}I", data, 8)
    start = 8 + 4 * ndim
    count = int(np.prod(dims)) if dims else 1
    if len(data) != start + 4 * count:
        raise MalformedManifest(f"{path}: tensor dump length does not match header")
    return np.frombuffer(data, dtype="<f4", count=count, offset=start).reshape(dims).copy()


# ---------------------------------------------------------------------------
# sample files
# ---------------------------------------------------------------------------


def _load_csv(path):
    names = None
    rows = []
    with open(path, newline="") as fh:
        for record in csv.reader(fh):
            record = [cell.strip() for cell in record if cell.strip() != ""]
            if not record or record[0].startswith("#"):
                continue
            try:
                rows.append(np.array([float(cell) for cell in record], dtype=np.float32))
            except ValueError:
                if names is None and not rows:
                    names = record
                else:
                    raise ShapeMismatch(f"{path}: non-numeric row {record!r}")
    if not rows:
        raise ShapeMismatch(f"{path}: no samples found")
    widths = {row.size for row in rows}
    if len(widths) != 1:
        raise ShapeMismatch(f"{path}: rows have differing widths {sorted(widths)}")
    return rows, names


def _load_tokens(path):
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rows.append(np.array([int(tok) for tok in line.split()], dtype=np.int64))
    if not rows:
        raise ShapeMismatch(f"{path}: no token samples found")
    return rows


def load_samples(path):
    """Load samples from a file; returns (samples, kind, feature_names).

    kind is "tabular", "tokens" or "image" (raw dumps of rank >= 2)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".csv":
        rows, names = _load_csv(path)
        return rows, "tabular", names
    if suffix in (".tokens", ".txt"):
        return _load_tokens(path), "tokens", None
    if suffix in (".f32", ".bin", ".raw"):
        tensor = read_raw_f32(path)
        kind = "image" if tensor.ndim >= 2 else "tabular"
        return [tensor], kind, None
    raise MalformedManifest(f"{path}: unrecognized sample file type {suffix!r}")


# ---------------------------------------------------------------------------
# relevance exports
# ---------------------------------------------------------------------------


def _channel_summary(value):
    arr = np.asarray(value, dtype=np.float64)
    return {
        "shape": list(arr.shape),
        "sum": float(arr.sum()),
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


def relevance_to_dict(rmap, include_leaf_tensors=True):
    nodes = {}
    for nid, value in rmap.node_relevance.items():
        if rmap.mode == "default":
            entry = {"relevance": _channel_summary(value)}
        else:
            entry = {
                "relevance_positive": _channel_summary(value[0]),
                "relevance_negative": _channel_summary(value[1]),
            }
        entry["bias_absorbed"] = rmap.bias_absorbed.get(nid, 0.0)
        entry["saturation_dropped"] = rmap.saturation_dropped.get(nid, 0.0)
        entry["unattributed"] = rmap.node_unattributed.get(nid, 0.0)
        nodes[nid] = entry
    leaves = {}
    if include_leaf_tensors:
        for leaf in rmap.input_ids:
            value = rmap.node_relevance[leaf]
            if rmap.mode == "default":
                leaves[leaf] = np.asarray(value).reshape(-1).tolist()
            else:
                leaves[leaf] = {
                    "positive": np.asarray(value[0]).reshape(-1).tolist(),
                    "negative": np.asarray(value[1]).reshape(-1).tolist(),
                }
    return {
        "mode": rmap.mode,
        "target_unit": rmap.target_unit,
        "start_scale": rmap.start_scale,
        "unattributed": rmap.unattributed,
        "nodes": nodes,
        "leaves": leaves,
    }


def write_relevance_json(path, rmap):
    Path(path).write_text(json.dumps(relevance_to_dict(rmap), indent=2) + "\n")


def write_relevance_csv(path, rmap, feature_names=None):
    """Leaf features, one row each: name, relevance (or both channels)."""
    if rmap.mode == "default":
        vector = rmap.leaf_vector()
        header = ["feature", "relevance"]
        columns = [vector]
    else:
        vp, vn = rmap.leaf_vector()
        header = ["feature", "relevance_positive", "relevance_negative"]
        columns = [vp, vn]
    n = len(columns[0])
    if feature_names is None or len(feature_names) != n:
        feature_names = [f"f{i}" for i in range(n)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for i in range(n):
        writer.writerow([feature_names[i]] + [repr(float(col[i])) for col in columns])
    Path(path).write_text(buf.getvalue())


def write_relevance_raw(path, rmap, leaf=None):
    """Raw float32 dump of one leaf's relevance (for image inputs)."""
    leaf = leaf or rmap.input_ids[0]
    value = rmap.node_relevance[leaf]
    if rmap.mode != "default":
        value = np.asarray(value[0]) - np.asarray(value[1])
    write_raw_f32(path, np.asarray(value, dtype=np.float32))


# ---------------------------------------------------------------------------
# PNG heatmaps
# ---------------------------------------------------------------------------

_COLORMAPS = {
    # symmetric diverging anchors at t = 0, 0.5, 1 (negative, zero, positive)
    "bwr": ((59, 76, 192), (255, 255, 255), (180, 4, 38)),
    "gray": ((0, 0, 0), (128, 128, 128), (255, 255, 255)),
}

COLORMAP_NAMES = tuple(_COLORMAPS)


def apply_colormap(values, name="bwr"):
    """Map values in [-1, 1] to RGB via a diverging colormap centered at 0."""
    if name not in _COLORMAPS:
        raise MalformedManifest(f"unknown colormap {name!r}; expected {COLORMAP_NAMES}")
    low, mid, high = (np.array(c, dtype=np.float64) for c in _COLORMAPS[name])
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    t = np.abs(v)[..., None]
    toward = np.where(v[..., None] >= 0, high, low)
    rgb = mid * (1 - t) + toward * t
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def write_png(path, rgb):
    """Minimal 8-bit RGB PNG writer (filter 0, fixed zlib level)."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeMismatch(f"PNG writer expects (H, W, 3) uint8, got {rgb.shape}")
    height, width, _ = rgb.shape
    raw = b"".join(b"\x00" + rgb[row].tobytes() for row in range(height))

    def chunk(tag, payload):
        body = tag + payload
        return struct.pack(">I", len(payload)) + body + struct.pack(
            ">I", zlib.crc32(body) & 0xFFFFFFFF
        )

    header = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    data = (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", header)
        + chunk(b"IDAT", zlib.compress(raw, 6))
        + chunk(b"IEND", b"")
    )
    Path(path).write_bytes(data)


def heatmap_png(path, relevance, colormap="bwr", upscale=1):
    """Render per-pixel relevance: sum channels, scale symmetrically, colorize."""
    rel = np.asarray(relevance, dtype=np.float64)
    if rel.ndim == 3:
        rel = rel.sum(axis=-1)
    if rel.ndim != 2:
        raise ShapeMismatch(f"heatmap expects a 2-D or 3-D tensor, got shape {rel.shape}")
    peak = np.abs(rel).max()
    scaled = rel / peak if peak > 0 else rel
    rgb = apply_colormap(scaled, colormap)
    if upscale > 1:
        rgb = np.repeat(np.repeat(rgb, upscale, axis=0), upscale, axis=1)
    write_png(path, rgb)
