"""Deterministic toy models for tests, demos and vendored fixtures.

Everything here is a pure function of the seed: regenerating with the same
seed reproduces every manifest, weights blob and fixtures file byte for
byte.  The models are sized for desk-scale checks, not for realism:

  * ``oracle_mlp2``  3 -> 2 relu -> 1 linear, hand-picked weights;
  * ``oracle_mlp3``  4 -> 5 relu -> 3 sigmoid -> 2 linear;
  * ``toy_cnn``      8x8x1 conv/maxpool/dense classifier for a synthetic
    two-class blob task (bright patch in the center vs. in a corner);
  * ``tiny_encoder`` two attention blocks with layernorm, residual adds and
    a softmax head over 4 tokens;
  * ``mha_2x2``      a single 1-head attention node with identity
    projections on a 2x2 input, for hand-checkable attention relevance;
  * ``token_lookup`` a text model whose prediction depends only on the
    token in position 0.

Regenerate the vendored files with ``python -m backtrace.toys --out models``.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from .activations import make_desc
from .forward import forward
from .metrics import philox_stream
from .model import GraphModel, NodeSpec
from .serialize import save_model_files

TOY_SEED = 7
TOY_NAMES = (
    "oracle_mlp2",
    "oracle_mlp3",
    "toy_cnn",
    "tiny_encoder",
    "mha_2x2",
    "token_lookup",
)


def _f32(values):
    return np.asarray(values, dtype=np.float32)


def _dense(nid, W, b, activation=None):
    return NodeSpec(nid, "dense", {"W": _f32(W), "b": _f32(b)},
                    activation=make_desc(activation) if activation else None)


def _chain_edges(ids):
    return [[a, b, 0] for a, b in zip(ids, ids[1:])]


def build_oracle_mlp2() -> GraphModel:
    nodes = [
        NodeSpec("x", "input", attrs={"shape": (3,), "dtype": "f32"}),
        _dense("fc1", [[1.0, 1.0, -2.0], [0.5, -1.0, 1.0]], [0.5, -0.25], "relu"),
        _dense("fc2", [[1.5, -2.0]], [0.1], "linear"),
    ]
    return GraphModel(1, nodes, _chain_edges(["x", "fc1", "fc2"]), ["x"], "fc2")


def build_oracle_mlp3(seed=TOY_SEED) -> GraphModel:
    rng = philox_stream(seed, stream=31)
    nodes = [
        NodeSpec("x", "input", attrs={"shape": (4,), "dtype": "f32"}),
        _dense("fc1", rng.uniform(-1, 1, (5, 4)), rng.uniform(-0.5, 0.5, 5), "relu"),
        _dense("fc2", rng.uniform(-1, 1, (3, 5)), rng.uniform(-0.5, 0.5, 3), "sigmoid"),
        _dense("fc3", rng.uniform(-1, 1, (2, 3)), rng.uniform(-0.5, 0.5, 2), "linear"),
    ]
    return GraphModel(1, nodes, _chain_edges(["x", "fc1", "fc2", "fc3"]), ["x"], "fc3")


def build_toy_cnn() -> GraphModel:
    # Channel 0 is a 3x3 brightness detector; the head reads the pooled 3x3
    # grid: center cell -> "center blob" logit, corner cells -> "corner blob".
    kernel = np.zeros((3, 3, 1, 4), dtype=np.float32)
    kernel[:, :, 0, 0] = 1.0
    kernel[:, :, 0, 1] = [[-1, 0, 1]] * 3          # vertical edges
    kernel[:, :, 0, 2] = [[-1] * 3, [0] * 3, [1] * 3]  # horizontal edges
    kernel[1, 1, 0, 3] = 1.0
    conv_bias = _f32([0.02, 0.0, 0.0, 0.0])

    head = np.zeros((2, 36), dtype=np.float32)  # flatten of (3, 3, 4)
    for i in range(3):
        for j in range(3):
            flat = (i * 3 + j) * 4
            if (i, j) == (1, 1):
                head[1, flat] = 2.0
            elif i != 1 and j != 1:
                head[0, flat] = 0.8
            head[0, flat + 3] = 0.01
            head[1, flat + 1] = 0.01
            head[1, flat + 2] = 0.01
    nodes = [
        NodeSpec("pixels", "input", attrs={"shape": (8, 8, 1), "dtype": "f32"}),
        NodeSpec("conv1", "conv2d", {"W": kernel, "b": conv_bias},
                 attrs={"stride": 1, "padding": "valid"}, activation=make_desc("relu")),
        NodeSpec("pool1", "maxpool2d", attrs={"window": 2, "stride": 2}),
        NodeSpec("flat", "flatten"),
        _dense("head", head, [0.1, -0.1], "linear"),
    ]
    edges = _chain_edges(["pixels", "conv1", "pool1", "flat", "head"])
    return GraphModel(1, nodes, edges, ["pixels"], "head")


def synthetic_blobs(count, seed=TOY_SEED):
    """Two-class 8x8 images: a bright 2x2 patch in the center vs. a corner.

    The geometry keeps the classes separated under the toy CNN: the center
    patch sits where only the pooled center cell sees a full detector
    response, corner patches where only a pooled corner cell does.
    """
    rng = philox_stream(seed, stream=47)
    samples, labels = [], []
    corners = [(0, 0), (0, 6), (6, 0), (6, 6)]
    for i in range(count):
        image = rng.uniform(0.0, 0.05, (8, 8, 1)).astype(np.float32)
        label = i % 2
        if label == 1:
            r, c = 3, 3
        else:
            r, c = corners[int(rng.integers(0, 4))]
        image[r : r + 2, c : c + 2, 0] += rng.uniform(0.8, 1.2)
        samples.append(image)
        labels.append(label)
    return samples, np.array(labels)


def build_tiny_encoder(seed=TOY_SEED) -> GraphModel:
    rng = philox_stream(seed, stream=59)
    d, vocab, T = 8, 16, 4

    def mha_params():
        params = {}
        for name in ("W_Q", "W_K", "W_V", "W_O"):
            params[name] = (0.4 * rng.normal(0, 1, (d, d))).astype(np.float32)
            params["b" + name[1:]] = (0.05 * rng.normal(0, 1, d)).astype(np.float32)
        return params

    def ln_params():
        return {
            "gamma": (1.0 + 0.1 * rng.normal(0, 1, d)).astype(np.float32),
            "beta": (0.05 * rng.normal(0, 1, d)).astype(np.float32),
        }

    nodes = [
        NodeSpec("tokens", "input", attrs={"shape": (T,), "dtype": "token_id"}),
        NodeSpec("embed", "embedding", {"table": (0.6 * rng.normal(0, 1, (vocab, d))).astype(np.float32)}),
        NodeSpec("ln1", "layernorm", ln_params(), attrs={"epsilon": 1e-5}),
        NodeSpec("attn1", "mha", mha_params(), attrs={"head_count": 2}),
        NodeSpec("res1", "add"),
        NodeSpec("ln2", "layernorm", ln_params(), attrs={"epsilon": 1e-5}),
        NodeSpec("attn2", "mha", mha_params(), attrs={"head_count": 2}),
        NodeSpec("res2", "add"),
        NodeSpec("flat", "flatten"),
        _dense("head", (0.3 * rng.normal(0, 1, (2, T * d))).astype(np.float32),
               rng.uniform(-0.1, 0.1, 2), "linear"),
        NodeSpec("probs", "softmax", attrs={"axis": -1}),
    ]
    edges = [
        ["tokens", "embed", 0],
        ["embed", "ln1", 0],
        ["ln1", "attn1", 0],
        ["attn1", "res1", 0],
        ["ln1", "res1", 1],
        ["res1", "ln2", 0],
        ["ln2", "attn2", 0],
        ["attn2", "res2", 0],
        ["ln2", "res2", 1],
        ["res2", "flat", 0],
        ["flat", "head", 0],
        ["head", "probs", 0],
    ]
    return GraphModel(1, nodes, edges, ["tokens"], "probs")


def build_mha_2x2() -> GraphModel:
    eye = np.eye(2, dtype=np.float32)
    zero = np.zeros(2, dtype=np.float32)
    params = {"W_Q": eye.copy(), "b_Q": zero.copy(), "W_K": eye.copy(), "b_K": zero.copy(),
              "W_V": eye.copy(), "b_V": zero.copy(), "W_O": eye.copy(), "b_O": zero.copy()}
    nodes = [
        NodeSpec("x", "input", attrs={"shape": (2, 2), "dtype": "f32"}),
        NodeSpec("attn", "mha", params, attrs={"head_count": 1}),
    ]
    return GraphModel(1, nodes, [["x", "attn", 0]], ["x"], "attn")


def build_token_lookup(seed=TOY_SEED) -> GraphModel:
    rng = philox_stream(seed, stream=71)
    vocab, d, T = 8, 4, 6
    table = (0.8 * rng.normal(0, 1, (vocab, d))).astype(np.float32)
    table[0] = 0.0  # baseline token embeds to zero
    head = np.zeros((2, T * d), dtype=np.float32)
    head[:, :d] = rng.uniform(-1.5, 1.5, (2, d))  # reads position 0 only
    nodes = [
        NodeSpec("tokens", "input", attrs={"shape": (T,), "dtype": "token_id"}),
        NodeSpec("embed", "embedding", {"table": table}),
        NodeSpec("flat", "flatten"),
        _dense("head", head, [0.0, 0.0], "linear"),
    ]
    edges = _chain_edges(["tokens", "embed", "flat", "head"])
    return GraphModel(1, nodes, edges, ["tokens"], "head")


def _fixture_inputs(name, model, seed):
    rng = philox_stream(seed, stream=101 + TOY_NAMES.index(name))
    leaf = model.input_ids[0]
    shape = model.shapes[leaf]
    samples = []
    if name == "toy_cnn":
        samples, _ = synthetic_blobs(8, seed)
    elif model.dtypes[leaf] == "token_id":
        embed = next(n for n in model.nodes if n.kind == "embedding")
        vocab = embed.params["table"].shape[0]
        for _ in range(8):
            samples.append(rng.integers(1, vocab, size=shape).astype(np.int64))
    elif name == "mha_2x2":
        for _ in range(8):
            signs = np.where(rng.uniform(0, 1, shape) < 0.5, -1.0, 1.0)
            samples.append((signs * rng.uniform(0.2, 1.0, shape)).astype(np.float32))
    else:
        for _ in range(8):
            samples.append(rng.uniform(-2, 2, shape).astype(np.float32))
    return samples


def make_toy_models(seed=TOY_SEED):
    """Build every toy model plus its fixtures; same seed, same bytes."""
    builders = {
        "oracle_mlp2": build_oracle_mlp2,
        "oracle_mlp3": lambda: build_oracle_mlp3(seed),
        "toy_cnn": build_toy_cnn,
        "tiny_encoder": lambda: build_tiny_encoder(seed),
        "mha_2x2": build_mha_2x2,
        "token_lookup": lambda: build_token_lookup(seed),
    }
    out = {}
    for name in TOY_NAMES:
        model = builders[name]()
        leaf = model.input_ids[0]
        fixtures = {"model": name, "seed": seed,
                    "input_kind": model.dtypes[leaf], "samples": []}
        for sample in _fixture_inputs(name, model, seed):
            prediction, _ = forward(model, sample)
            fixtures["samples"].append({
                "shape": list(np.asarray(sample).shape),
                "input": np.asarray(sample).reshape(-1).tolist(),
                "prediction": np.asarray(prediction, dtype=np.float64).reshape(-1).tolist(),
            })
        out[name] = (model, fixtures)
    return out


def write_all(out_dir, seed=TOY_SEED):
    """Write manifest/weights/fixtures files for every toy model."""
    out_dir = Path(out_dir)
    paths = []
    for name, (model, fixtures) in make_toy_models(seed).items():
        manifest_path, weights_path = save_model_files(model, out_dir, name)
        fixtures_path = out_dir / f"{name}.fixtures.json"
        fixtures_path.write_text(json.dumps(fixtures, indent=2) + "\n")
        paths.extend([manifest_path, weights_path, fixtures_path])
    return paths


def main(argv=None):
    parser = argparse.ArgumentParser(description="regenerate the vendored toy models")
    parser.add_argument("--out", default="models")
    parser.add_argument("--seed", type=int, default=TOY_SEED)
    args = parser.parse_args(argv)
    for path in write_all(args.out, args.seed):
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
