"""Sample-level aggregation and relevance export formats."""

import json

import numpy as np
import pytest

from backtrace import EmptyInput, backtrace, forward, global_importance
from backtrace.io_formats import (
    apply_colormap,
    heatmap_png,
    load_samples,
    read_raw_f32,
    relevance_to_dict,
    write_raw_f32,
    write_relevance_csv,
    write_relevance_json,
)


def _map_for(model, x, mode="default"):
    _, trace = forward(model, x)
    return backtrace(model, trace, mode=mode)


class TestGlobalImportance:
    def test_single_sample_equals_normalized_local(self, oracle_mlp2):
        rmap = _map_for(oracle_mlp2, [1.0, -0.5, 2.0])
        result = global_importance([rmap], [2.0])
        np.testing.assert_allclose(result, rmap.leaf_vector() / 2.0, atol=1e-12)

    def test_two_samples_outcomes_one_and_two(self, oracle_mlp2):
        x = [1.0, -0.5, 2.0]
        maps = [_map_for(oracle_mlp2, x), _map_for(oracle_mlp2, x)]
        result = global_importance(maps, [1.0, 2.0])
        np.testing.assert_allclose(result, 0.75 * maps[0].leaf_vector(), atol=1e-12)

    def test_all_zero_relevance_gives_zero(self, oracle_mlp2):
        rmap = _map_for(oracle_mlp2, [1.0, -0.5, 2.0])
        for leaf in rmap.input_ids:
            rmap.node_relevance[leaf] = np.zeros_like(rmap.node_relevance[leaf])
        result = global_importance([rmap], [3.0])
        np.testing.assert_array_equal(result, np.zeros(3))

    def test_zero_outcome_skipped_with_warning(self, oracle_mlp2):
        x = [1.0, -0.5, 2.0]
        maps = [_map_for(oracle_mlp2, x), _map_for(oracle_mlp2, x)]
        with pytest.warns(UserWarning, match="skipped 1"):
            result = global_importance(maps, [0.0, 2.0])
        np.testing.assert_allclose(result, maps[1].leaf_vector() / 2.0, atol=1e-12)

    def test_empty_input_raises(self):
        with pytest.raises(EmptyInput):
            global_importance([], [])

    def test_all_zero_outcomes_raise(self, oracle_mlp2):
        rmap = _map_for(oracle_mlp2, [1.0, -0.5, 2.0])
        with pytest.warns(UserWarning):
            with pytest.raises(EmptyInput):
                global_importance([rmap], [0.0])

    def test_contrastive_uses_net_channel(self, oracle_mlp2):
        rmap = _map_for(oracle_mlp2, [1.0, -0.5, 2.0], mode="contrastive")
        result = global_importance([rmap], [1.0])
        vp, vn = rmap.leaf_vector()
        np.testing.assert_allclose(result, vp - vn, atol=1e-12)


class TestExports:
    def test_json_round_trip_fields(self, oracle_mlp2, tmp_path):
        rmap = _map_for(oracle_mlp2, [1.0, -0.5, 2.0])
        path = tmp_path / "relevance.json"
        write_relevance_json(path, rmap)
        doc = json.loads(path.read_text())
        assert doc["mode"] == "default"
        assert set(doc["nodes"]) == {"x", "fc1", "fc2"}
        np.testing.assert_allclose(doc["leaves"]["x"], rmap.leaf_vector(), atol=1e-12)

    def test_csv_has_one_row_per_feature(self, oracle_mlp2, tmp_path):
        rmap = _map_for(oracle_mlp2, [1.0, -0.5, 2.0])
        path = tmp_path / "relevance.csv"
        write_relevance_csv(path, rmap, ["age", "income", "score"])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "feature,relevance"
        assert len(lines) == 4
        assert lines[1].startswith("age,")

    def test_contrastive_csv_two_channels(self, oracle_mlp2, tmp_path):
        rmap = _map_for(oracle_mlp2, [1.0, -0.5, 2.0], mode="contrastive")
        path = tmp_path / "relevance.csv"
        write_relevance_csv(path, rmap)
        header = path.read_text().splitlines()[0]
        assert header == "feature,relevance_positive,relevance_negative"

    def test_raw_f32_round_trip(self, tmp_path):
        arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        path = tmp_path / "tensor.f32"
        write_raw_f32(path, arr)
        back = read_raw_f32(path)
        assert back.shape == (2, 3, 4)
        assert back.tobytes() == arr.tobytes()

    def test_contrastive_json_carries_both_channels(self, oracle_mlp2, tmp_path):
        rmap = _map_for(oracle_mlp2, [1.0, -0.5, 2.0], mode="contrastive")
        doc = relevance_to_dict(rmap)
        assert "positive" in doc["leaves"]["x"]
        assert "relevance_positive" in doc["nodes"]["fc1"]


class TestSampleLoaders:
    def test_csv_rows(self, tmp_path):
        path = tmp_path / "samples.csv"
        path.write_text("a,b,c\n1,2,3\n4,5,6\n")
        samples, kind, names = load_samples(path)
        assert kind == "tabular" and names == ["a", "b", "c"]
        np.testing.assert_array_equal(samples[1], [4.0, 5.0, 6.0])

    def test_token_lines(self, tmp_path):
        path = tmp_path / "samples.tokens"
        path.write_text("1 2 3\n# comment\n4 5 6\n")
        samples, kind, _ = load_samples(path)
        assert kind == "tokens" and len(samples) == 2
        assert samples[0].dtype == np.int64

    def test_raw_dump_is_image_kind(self, tmp_path):
        path = tmp_path / "img.f32"
        write_raw_f32(path, np.zeros((4, 4, 1), dtype=np.float32))
        samples, kind, _ = load_samples(path)
        assert kind == "image" and samples[0].shape == (4, 4, 1)


class TestHeatmap:
    def test_png_deterministic(self, tmp_path):
        rel = np.linspace(-1, 1, 64).reshape(8, 8)
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        heatmap_png(a, rel, "bwr", upscale=4)
        heatmap_png(b, rel, "bwr", upscale=4)
        data = a.read_bytes()
        assert data == b.read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"

    def test_colormap_center_is_neutral(self):
        rgb = apply_colormap(np.array([[0.0]]), "bwr")
        assert tuple(rgb[0, 0]) == (255, 255, 255)

    def test_colormap_signs_differ(self):
        rgb = apply_colormap(np.array([-1.0, 1.0]), "bwr")
        assert rgb[0, 2] > rgb[0, 0]  # negative end is blue-heavy
        assert rgb[1, 0] > rgb[1, 2]  # positive end is red-heavy
