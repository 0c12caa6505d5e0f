"""Cross-implementation parity for exporter output.

The exporter (exporter/, a separate TypeScript package) writes models in
the neutral format plus fixtures with predictions computed by its source
framework.  Whenever its output directory exists, every exported model
must pass engine validation and reproduce the source predictions within
1e-4 per element.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from backtrace import forward
from backtrace.serialize import load_model_files

EXPORT_DIR = Path(__file__).resolve().parent.parent / "exporter" / "out"

manifests = sorted(EXPORT_DIR.glob("*.manifest.json")) if EXPORT_DIR.exists() else []

pytestmark = pytest.mark.skipif(
    not manifests, reason="no exporter output present (run the exporter first)"
)


@pytest.mark.parametrize("manifest", manifests, ids=lambda p: p.name.split(".")[0])
def test_exported_model_matches_source_predictions(manifest):
    model = load_model_files(manifest)
    fixtures_path = manifest.with_name(
        manifest.name.replace(".manifest.json", ".fixtures.json")
    )
    fixtures = json.loads(fixtures_path.read_text())
    assert len(fixtures["samples"]) >= 8, "fixtures are mandatory in every export"
    worst = 0.0
    for entry in fixtures["samples"]:
        sample = np.asarray(entry["input"]).reshape(entry["shape"])
        sample = (sample.astype(np.int64) if fixtures["input_kind"] == "token_id"
                  else sample.astype(np.float32))
        prediction, _ = forward(model, sample)
        got = prediction.reshape(-1).astype(np.float64)
        want = np.asarray(entry["prediction"], dtype=np.float64)
        assert got.shape == want.shape
        worst = max(worst, float(np.abs(got - want).max()))
    assert worst <= 1e-4, f"{manifest.name}: parity error {worst:.2e} > 1e-4"
