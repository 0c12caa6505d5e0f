import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from backtrace.model import GraphModel, NodeSpec  # noqa: E402
from backtrace.activations import make_desc  # noqa: E402
from backtrace.serialize import load_model_files  # noqa: E402

REPO = Path(__file__).resolve().parent.parent
MODELS = REPO / "models"


def toy(name):
    return load_model_files(MODELS / f"{name}.manifest.json")


@pytest.fixture(scope="session")
def oracle_mlp2():
    return toy("oracle_mlp2")


@pytest.fixture(scope="session")
def oracle_mlp3():
    return toy("oracle_mlp3")


@pytest.fixture(scope="session")
def toy_cnn():
    return toy("toy_cnn")


@pytest.fixture(scope="session")
def tiny_encoder():
    return toy("tiny_encoder")


@pytest.fixture(scope="session")
def mha_2x2():
    return toy("mha_2x2")


@pytest.fixture(scope="session")
def token_lookup():
    return toy("token_lookup")


def single_dense_model(W, b, activation="linear", n_in=None):
    """A one-layer model around a single dense node, for rule-level tests."""
    W = np.asarray(W, dtype=np.float32)
    n_in = n_in or W.shape[1]
    nodes = [
        NodeSpec("x", "input", attrs={"shape": (n_in,), "dtype": "f32"}),
        NodeSpec("fc", "dense", {"W": W, "b": np.asarray(b, dtype=np.float32)},
                 activation=make_desc(activation) if activation else None),
    ]
    return GraphModel(1, nodes, [("x", "fc", 0)], ["x"], "fc")


def mlp_model(layers, n_in):
    """Chain of dense layers from (W, b, activation) triples."""
    nodes = [NodeSpec("x", "input", attrs={"shape": (n_in,), "dtype": "f32"})]
    edges = []
    previous = "x"
    for idx, (W, b, act) in enumerate(layers):
        nid = f"fc{idx + 1}"
        nodes.append(
            NodeSpec(nid, "dense",
                     {"W": np.asarray(W, dtype=np.float32),
                      "b": np.asarray(b, dtype=np.float32)},
                     activation=make_desc(act))
        )
        edges.append((previous, nid, 0))
        previous = nid
    return GraphModel(1, nodes, edges, ["x"], previous)
