"""CLI contract: exit codes, artifacts, byte-identical re-runs."""

import json
from pathlib import Path

import numpy as np
import pytest

from backtrace.cli import main
from backtrace.io_formats import write_raw_f32
from backtrace.toys import synthetic_blobs

MODELS = Path(__file__).resolve().parent.parent / "models"


@pytest.fixture()
def tabular_input(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("2.0,-1.0,3.0\n0.5,0.5,0.5\n")
    return path


@pytest.fixture()
def token_input(tmp_path):
    path = tmp_path / "x.tokens"
    path.write_text("3 1 2 5 4 6\n2 7 1 3 5 4\n")
    return path


@pytest.fixture()
def image_input(tmp_path):
    blobs, _ = synthetic_blobs(2)
    path = tmp_path / "img.f32"
    write_raw_f32(path, blobs[1])
    return path


def model_arg(name):
    return str(MODELS / f"{name}.manifest.json")


class TestExplain:
    def test_writes_relevance_files(self, tabular_input, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["explain", "--model", model_arg("oracle_mlp2"),
                     "--input", str(tabular_input), "--out", str(out)])
        assert code == 0
        assert (out / "relevance.json").exists()
        assert (out / "relevance.csv").exists()
        assert "feature" in capsys.readouterr().out

    def test_oracle_mlp_leaf_matches_transcription(self, tabular_input, tmp_path):
        from backtrace.serialize import load_model_files
        from oracles import backtrace_default_mlp

        out = tmp_path / "out"
        main(["explain", "--model", model_arg("oracle_mlp2"),
              "--input", str(tabular_input), "--out", str(out)])
        doc = json.loads((out / "relevance.json").read_text())
        model = load_model_files(MODELS / "oracle_mlp2.manifest.json")
        layers = [
            (model.node_by_id["fc1"].params["W"], model.node_by_id["fc1"].params["b"], "relu"),
            (model.node_by_id["fc2"].params["W"], model.node_by_id["fc2"].params["b"], "linear"),
        ]
        want = backtrace_default_mlp(layers, [2.0, -1.0, 3.0])
        np.testing.assert_allclose(doc["leaves"]["x"], want["leaf"], atol=1e-9)

    def test_contrastive_output_has_two_channels(self, tabular_input, tmp_path):
        out = tmp_path / "out"
        code = main(["explain", "--model", model_arg("oracle_mlp2"),
                     "--input", str(tabular_input), "--mode", "contrastive",
                     "--out", str(out)])
        assert code == 0
        doc = json.loads((out / "relevance.json").read_text())
        assert set(doc["leaves"]["x"]) == {"positive", "negative"}

    def test_image_input_writes_heatmap(self, image_input, tmp_path):
        out = tmp_path / "out"
        code = main(["explain", "--model", model_arg("toy_cnn"),
                     "--input", str(image_input), "--out", str(out)])
        assert code == 0
        assert (out / "heatmap.png").exists()
        assert (out / "relevance.f32").exists()

    def test_missing_weights_exit_2_no_partial_outputs(self, tabular_input, tmp_path):
        out = tmp_path / "out"
        code = main(["explain", "--model", model_arg("oracle_mlp2"),
                     "--weights", str(tmp_path / "missing.bin"),
                     "--input", str(tabular_input), "--out", str(out)])
        assert code == 2
        assert not out.exists() or not any(out.iterdir())

    def test_shape_mismatch_exit_3(self, tmp_path):
        sample = tmp_path / "bad.csv"
        sample.write_text("1.0,2.0\n")
        code = main(["explain", "--model", model_arg("oracle_mlp2"),
                     "--input", str(sample), "--out", str(tmp_path / "out")])
        assert code == 3

    def test_byte_identical_reruns(self, tabular_input, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["explain", "--model", model_arg("oracle_mlp2"),
                         "--input", str(tabular_input), "--seed", "9",
                         "--out", str(out)]) == 0
        for name in ("relevance.json", "relevance.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_explicit_target_and_index(self, tabular_input, tmp_path):
        code = main(["explain", "--model", model_arg("oracle_mlp2"),
                     "--input", str(tabular_input), "--target", "0",
                     "--index", "1", "--out", str(tmp_path / "out")])
        assert code == 0

    def test_image_outputs_byte_identical(self, image_input, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["explain", "--model", model_arg("toy_cnn"),
                         "--input", str(image_input), "--colormap", "bwr",
                         "--upscale", "4", "--out", str(out)]) == 0
        for name in ("heatmap.png", "relevance.f32", "relevance.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


class TestEvaluate:
    def test_summary_table_and_reports(self, image_input, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["evaluate", "--model", model_arg("toy_cnn"),
                     "--input", str(image_input), "--metrics",
                     "pixel_flipping,complexity", "--steps", "6",
                     "--seed", "3", "--out", str(out)])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "backtrace" in stdout and "random" in stdout
        assert (out / "metric_pixel_flipping.json").exists()
        assert (out / "metric_complexity.json").exists()

    def test_backtrace_beats_random_on_cnn(self, image_input, tmp_path):
        out = tmp_path / "out"
        main(["evaluate", "--model", model_arg("toy_cnn"),
              "--input", str(image_input), "--metrics", "pixel_flipping",
              "--steps", "6", "--seed", "3", "--out", str(out)])
        doc = json.loads((out / "metric_pixel_flipping.json").read_text())
        assert doc["methods"]["backtrace"]["mean"] < doc["methods"]["random"]["mean"]

    def test_metric_typo_exit_4_lists_valid_names(self, tabular_input, tmp_path, capsys):
        code = main(["evaluate", "--model", model_arg("oracle_mlp2"),
                     "--input", str(tabular_input), "--metrics", "pixel_fliping",
                     "--out", str(tmp_path / "out")])
        assert code == 4
        assert "pixel_flipping" in capsys.readouterr().err

    def test_same_seed_bit_identical_reports(self, token_input, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["evaluate", "--model", model_arg("token_lookup"),
                         "--input", str(token_input), "--metrics",
                         "morf_lerf,complexity", "--steps", "7", "--seed", "21",
                         "--out", str(out)]) == 0
        for name in ("metric_morf_lerf.json", "metric_complexity.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_failed_metric_still_emits_others(self, tabular_input, tmp_path, capsys):
        out = tmp_path / "out"
        # morf_lerf needs tokens; complexity still lands on disk, exit code 4
        code = main(["evaluate", "--model", model_arg("oracle_mlp2"),
                     "--input", str(tabular_input), "--metrics",
                     "morf_lerf,complexity", "--out", str(out)])
        assert code == 4
        assert (out / "metric_complexity.json").exists()
        assert not (out / "metric_morf_lerf.json").exists()
        assert "morf_lerf" in capsys.readouterr().err

    def test_mprt_on_tokens(self, token_input, tmp_path):
        out = tmp_path / "out"
        code = main(["evaluate", "--model", model_arg("token_lookup"),
                     "--input", str(token_input), "--metrics", "mprt",
                     "--seed", "2", "--out", str(out)])
        assert code == 0
        doc = json.loads((out / "metric_mprt.json").read_text())
        assert "per_layer" in doc["methods"]["backtrace"]

    def test_thread_fanout_does_not_change_results(self, token_input, tmp_path,
                                                   monkeypatch):
        out_serial, out_threads = tmp_path / "serial", tmp_path / "threads"
        args = ["evaluate", "--model", model_arg("token_lookup"),
                "--input", str(token_input), "--metrics", "morf_lerf,complexity",
                "--steps", "7", "--seed", "21"]
        monkeypatch.delenv("BACKTRACE_THREADS", raising=False)
        assert main(args + ["--out", str(out_serial)]) == 0
        monkeypatch.setenv("BACKTRACE_THREADS", "4")
        assert main(args + ["--out", str(out_threads)]) == 0
        for name in ("metric_morf_lerf.json", "metric_complexity.json"):
            assert (out_serial / name).read_bytes() == (out_threads / name).read_bytes()


class TestInspect:
    def test_zero_weight_layer_reports_ratio_one(self, tmp_path, capsys):
        from backtrace.model import GraphModel, NodeSpec
        from backtrace.serialize import save_model_files

        nodes = [
            NodeSpec("x", "input", attrs={"shape": (2,), "dtype": "f32"}),
            NodeSpec("fc", "dense",
                     {"W": np.zeros((1, 2), dtype=np.float32),
                      "b": np.array([0.5], dtype=np.float32)}),
        ]
        model = GraphModel(1, nodes, [("x", "fc", 0)], ["x"], "fc")
        save_model_files(model, tmp_path, "zero")
        sample = tmp_path / "x.csv"
        sample.write_text("1.0,2.0\n")
        code = main(["inspect", "--model", str(tmp_path / "zero.manifest.json"),
                     "--input", str(sample)])
        assert code == 0
        row = [line for line in capsys.readouterr().out.splitlines()
               if line.startswith("fc")][0]
        assert "1.000000" in row  # bias-to-input ratio

    def test_contrastive_inspect_has_channel_columns(self, tabular_input, capsys):
        code = main(["inspect", "--model", model_arg("oracle_mlp2"),
                     "--input", str(tabular_input), "--mode", "contrastive"])
        assert code == 0
        header = capsys.readouterr().out.splitlines()[0]
        assert "positive" in header and "negative" in header

    def test_ledger_echo_balances(self, tabular_input, capsys):
        code = main(["inspect", "--model", model_arg("oracle_mlp2"),
                     "--input", str(tabular_input)])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        header = lines[0].split()
        rows = [line.split() for line in lines[1:]]
        cols = {name: i for i, name in enumerate(header)}
        for row in rows:
            received = float(row[cols["received"]])
            parts = (float(row[cols["delivered"]]) + float(row[cols["bias_absorbed"]])
                     + float(row[cols["saturation_dropped"]]))
            assert abs(received - parts) <= 1e-5 * max(1.0, abs(received))
