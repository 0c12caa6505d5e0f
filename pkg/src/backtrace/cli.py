"""Command-line front end: explain, evaluate, inspect.

Exit codes are part of the contract: 0 success, 2 model load/validation
failure, 3 shape mismatch between sample and model, 4 metric-level failure
(remaining metrics are still emitted).  Output files are staged in a
temporary directory and moved into place only when the command succeeds,
so a failing run never leaves partial artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io_formats, metrics
from .errors import BacktraceError, ShapeMismatch
from .forward import forward
from .relevance import RelevanceMap, StartSpec, backtrace
from .serialize import load_model_files

EXIT_OK = 0
EXIT_LOAD_ERROR = 2
EXIT_SHAPE_ERROR = 3
EXIT_METRIC_ERROR = 4

METRIC_NAMES = (
    "pixel_flipping",
    "faithfulness",
    "max_sensitivity",
    "morf_lerf",
    "complexity",
    "mprt",
)


@dataclass
class RunConfig:
    manifest_path: Path
    weights_path: Path | None
    input_path: Path
    mode: str = "default"
    target: int | str = "argmax"
    seed: int = 0
    metric_names: tuple = ()
    out_dir: Path = Path("out")
    colormap: str = "bwr"
    upscale: int = 8
    steps: int = 20
    sample_index: int = 0
    start: StartSpec = field(init=False)

    def __post_init__(self):
        for path in (self.manifest_path, self.input_path):
            if not Path(path).exists():
                raise FileNotFoundError(f"no such file: {path}")
        if self.weights_path is not None and not Path(self.weights_path).exists():
            raise FileNotFoundError(f"no such file: {self.weights_path}")
        if self.mode not in ("default", "contrastive"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.start = StartSpec(target_unit=self.target)


def _parse_target(text):
    if text == "argmax":
        return "argmax"
    return int(text)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="backtrace",
        description="relevance backtracing and attribution evaluation for portable models",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("explain", "write relevance maps (and a heatmap for images) for one sample"),
        ("evaluate", "score attributions with the perturbation metrics"),
        ("inspect", "print the per-layer relevance ledger"),
    ):
        cmd = sub.add_parser(name, help=doc)
        cmd.add_argument("--model", required=True, help="path to <name>.manifest.json")
        cmd.add_argument("--weights", default=None,
                         help="weights blob; defaults to <name>.weights.bin next to the manifest")
        cmd.add_argument("--input", required=True, help="sample file (.csv, .tokens, .f32)")
        cmd.add_argument("--mode", default="default", choices=["default", "contrastive"])
        cmd.add_argument("--target", default="argmax", type=_parse_target,
                         help="output unit receiving the start relevance (flat index or argmax)")
        cmd.add_argument("--seed", default=0, type=int)
        cmd.add_argument("--out", default="out", help="output directory")
        cmd.add_argument("--colormap", default="bwr", choices=list(io_formats.COLORMAP_NAMES))
        cmd.add_argument("--upscale", default=8, type=int, help="heatmap pixel size")
        cmd.add_argument("--steps", default=20, type=int, help="perturbation curve points")
        cmd.add_argument("--index", default=0, type=int, help="which sample in the input file")
        if name == "evaluate":
            cmd.add_argument("--metrics", default="pixel_flipping,complexity",
                             help=f"comma list from {','.join(METRIC_NAMES)}")
    return parser


def _config_from_args(args):
    return RunConfig(
        manifest_path=Path(args.model),
        weights_path=Path(args.weights) if args.weights else None,
        input_path=Path(args.input),
        mode=args.mode,
        target=args.target,
        seed=args.seed,
        metric_names=tuple(
            m.strip() for m in getattr(args, "metrics", "").split(",") if m.strip()
        ),
        out_dir=Path(args.out),
        colormap=args.colormap,
        upscale=args.upscale,
        steps=args.steps,
        sample_index=args.index,
    )


class _StagedOutputs:
    """Collects files in a scratch dir; commit() moves them into the target."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out_dir))

    def path(self, name) -> Path:
        return self.stage / name

    def commit(self):
        for item in sorted(self.stage.iterdir()):
            os.replace(item, self.out_dir / item.name)
        self.stage.rmdir()

    def discard(self):
        shutil.rmtree(self.stage, ignore_errors=True)


def _load_everything(cfg: RunConfig):
    model = load_model_files(cfg.manifest_path, cfg.weights_path)
    samples, kind, names = io_formats.load_samples(cfg.input_path)
    if not 0 <= cfg.sample_index < len(samples):
        raise ShapeMismatch(
            f"--index {cfg.sample_index} outside {len(samples)} samples in {cfg.input_path}"
        )
    return model, samples, kind, names


def _explain_map(model, sample, start, mode="default") -> RelevanceMap:
    _, trace = forward(model, sample)
    return backtrace(model, trace, start, mode)


def _leaf_table(rmap: RelevanceMap, names, limit=10):
    if rmap.mode == "default":
        vector = rmap.leaf_vector()
        channels = [("relevance", vector)]
        ranking = np.argsort(-vector, kind="stable")
    else:
        vp, vn = rmap.leaf_vector()
        channels = [("positive", vp), ("negative", vn)]
        ranking = np.argsort(-vp, kind="stable")
    n = len(channels[0][1])
    if names is None or len(names) != n:
        names = [f"f{i}" for i in range(n)]
    lines = ["feature  " + "  ".join(label for label, _ in channels)]
    for i in ranking[: min(limit, n)]:
        cells = "  ".join(f"{values[i]: .6f}" for _, values in channels)
        lines.append(f"{names[i]:<8} {cells}")
    return "\n".join(lines)


def cmd_explain(cfg: RunConfig) -> int:
    model, samples, kind, names = _load_everything(cfg)
    sample = samples[cfg.sample_index]
    rmap = _explain_map(model, sample, cfg.start, cfg.mode)
    staged = _StagedOutputs(cfg.out_dir)
    try:
        io_formats.write_relevance_json(staged.path("relevance.json"), rmap)
        io_formats.write_relevance_csv(staged.path("relevance.csv"), rmap, names)
        if kind == "image":
            leaf = rmap.input_ids[0]
            value = rmap.node_relevance[leaf]
            if rmap.mode == "contrastive":
                value = np.asarray(value[0]) - np.asarray(value[1])
            io_formats.heatmap_png(staged.path("heatmap.png"), value,
                                   cfg.colormap, cfg.upscale)
            io_formats.write_relevance_raw(staged.path("relevance.f32"), rmap)
    except BaseException:
        staged.discard()
        raise
    staged.commit()
    print(_leaf_table(rmap, names))
    return EXIT_OK


def cmd_inspect(cfg: RunConfig) -> int:
    model, samples, _, _ = _load_everything(cfg)
    sample = samples[cfg.sample_index]
    rmap = _explain_map(model, sample, cfg.start, cfg.mode)
    contrastive = rmap.mode == "contrastive"
    header = ["layer", "kind", "received", "delivered", "bias_absorbed",
              "saturation_dropped", "bias_to_input"]
    if contrastive:
        header += ["positive", "negative"]
    rows = [header]
    for nid in model.topo_order:
        node = model.node_by_id[nid]
        if node.kind == "input":
            continue
        value = rmap.node_relevance[nid]
        if contrastive:
            pos, neg = (float(np.asarray(v).sum()) for v in value)
            received = pos + neg
        else:
            received = float(np.asarray(value).sum())
        bias = rmap.bias_absorbed.get(nid, 0.0)
        sat = rmap.saturation_dropped.get(nid, 0.0)
        unattr = rmap.node_unattributed.get(nid, 0.0)
        delivered = received - bias - sat - unattr
        ratio = bias / received if abs(received) > 1e-12 else 0.0
        row = [nid, node.kind, f"{received:.6f}", f"{delivered:.6f}",
               f"{bias:.6f}", f"{sat:.6f}", f"{ratio:.6f}"]
        if contrastive:
            row += [f"{pos:.6f}", f"{neg:.6f}"]
        rows.append(row)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    for row in rows:
        print("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return EXIT_OK


def _attributions_for(model, sample, cfg, index):
    """Backtrace and random-baseline attributions shaped like the sample."""
    rmap = _explain_map(model, sample, cfg.start)
    shape = np.asarray(sample).shape
    topo_attr = rmap.leaf_vector().reshape(shape)
    rand_attr = metrics.random_attribution_baseline(shape, cfg.seed ^ index)
    return topo_attr, rand_attr.astype(np.float64)


def _evaluate_metric(name, model, samples, kind, cfg):
    """Mean metric value per method over all samples, plus sample-0 curves.

    Samples are independent; the per-sample work runs through parallel_map,
    so BACKTRACE_THREADS can fan it out without changing any result (each
    sample derives its own seed).
    """
    pcfg = metrics.PerturbationConfig(seed=cfg.seed, steps=cfg.steps)

    def explain_vec(m, s):
        _, trace = forward(m, s)
        return backtrace(m, trace, cfg.start, "default").leaf_vector()

    if name == "mprt":
        reports = metrics.mprt(model, samples, lambda m, s: explain_vec(m, s), pcfg)
        dummy = metrics.mprt(model, samples, lambda m, s: _dummy_explanation(s), pcfg)
        return {
            "backtrace": {"mean": reports[-1].value,
                          "per_layer": {r.name: r.value for r in reports[:-1]}},
            "input_copy": {"mean": dummy[-1].value,
                           "per_layer": {r.name: r.value for r in dummy[:-1]}},
        }, {}

    if name in ("pixel_flipping", "faithfulness", "max_sensitivity") and kind == "tokens":
        raise ShapeMismatch(f"{name} needs numeric features, got token input")
    if name == "morf_lerf" and kind != "tokens":
        raise ShapeMismatch("morf_lerf needs token input")

    def one_sample(index_sample):
        index, sample = index_sample
        values: dict[str, float] = {}
        sample_curves: dict[str, list] = {}
        if name == "morf_lerf":
            attr = explain_vec(model, sample)
            morf, lerf, delta = metrics.morf_lerf(model, sample, attr, pcfg)
            values["backtrace"] = delta
            sample_curves["backtrace_morf"] = morf.curve
            sample_curves["backtrace_lerf"] = lerf.curve
            rand = metrics.random_attribution_baseline(sample.shape, cfg.seed ^ index)
            _, _, rdelta = metrics.morf_lerf(model, sample, rand, pcfg)
            values["random"] = rdelta
        elif name == "max_sensitivity":
            report = metrics.max_sensitivity(
                model, sample, lambda s: explain_vec(model, s), pcfg
            )
            values["backtrace"] = report.value
        else:
            topo_attr, rand_attr = _attributions_for(model, sample, cfg, index)
            if name == "pixel_flipping":
                bt = metrics.pixel_flipping(model, sample, topo_attr, pcfg)
                rd = metrics.pixel_flipping(model, sample, rand_attr, pcfg)
                values["backtrace"], values["random"] = bt.value, rd.value
                sample_curves["backtrace"], sample_curves["random"] = bt.curve, rd.curve
            elif name == "faithfulness":
                values["backtrace"] = metrics.faithfulness_correlation(
                    model, sample, topo_attr, pcfg).value
                values["random"] = metrics.faithfulness_correlation(
                    model, sample, rand_attr, pcfg).value
            elif name == "complexity":
                values["backtrace"] = metrics.complexity(topo_attr)
                values["random"] = metrics.complexity(rand_attr)
            else:
                raise ValueError(f"unknown metric {name!r}")
        return values, sample_curves

    outcomes = metrics.parallel_map(one_sample, enumerate(samples))
    per_method: dict[str, list[float]] = {}
    for values, _ in outcomes:
        for method, value in values.items():
            per_method.setdefault(method, []).append(float(value))
    curves = outcomes[0][1] if outcomes else {}
    summary = {
        method: {"mean": float(np.mean(values)), "per_sample": values}
        for method, values in per_method.items()
    }
    return summary, curves


def _dummy_explanation(sample):
    return np.asarray(sample, dtype=np.float64).reshape(-1)


def cmd_evaluate(cfg: RunConfig) -> int:
    model, samples, kind, _ = _load_everything(cfg)
    unknown = [m for m in cfg.metric_names if m not in METRIC_NAMES]
    if not cfg.metric_names or unknown:
        print(
            f"unknown metrics {unknown}; valid names: {', '.join(METRIC_NAMES)}",
            file=sys.stderr,
        )
        return EXIT_METRIC_ERROR
    staged = _StagedOutputs(cfg.out_dir)
    results = {}
    failures = {}
    try:
        for name in cfg.metric_names:
            try:
                summary, curves = _evaluate_metric(name, model, samples, kind, cfg)
            except (BacktraceError, ValueError) as exc:
                failures[name] = str(exc)
                continue
            results[name] = summary
            payload = {"metric": name, "seed": cfg.seed, "steps": cfg.steps,
                       "methods": summary}
            staged.path(f"metric_{name}.json").write_text(
                json.dumps(payload, indent=2) + "\n"
            )
            if curves:
                lines = ["method,fraction,score"]
                for method, curve in sorted(curves.items()):
                    for x, y in curve:
                        lines.append(f"{method},{x!r},{y!r}")
                staged.path(f"metric_{name}_curves.csv").write_text("\n".join(lines) + "\n")
    except BaseException:
        staged.discard()
        raise
    staged.commit()

    # Summary table: one row per method, one column per metric.
    methods = sorted({m for summary in results.values() for m in summary})
    width = max([12] + [len(n) for n in results])
    print("method".ljust(14) + "  ".join(name.ljust(width) for name in results))
    for method in methods:
        cells = []
        for name in results:
            entry = results[name].get(method)
            cells.append(("-" if entry is None else f"{entry['mean']:.6f}").ljust(width))
        print(method.ljust(14) + "  ".join(cells))
    for name, message in failures.items():
        print(f"metric {name} failed: {message}", file=sys.stderr)
    return EXIT_METRIC_ERROR if failures else EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except (FileNotFoundError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_LOAD_ERROR
    try:
        if args.command == "explain":
            return cmd_explain(cfg)
        if args.command == "inspect":
            return cmd_inspect(cfg)
        return cmd_evaluate(cfg)
    except ShapeMismatch as exc:
        print(f"shape error: {exc}", file=sys.stderr)
        return EXIT_SHAPE_ERROR
    except (BacktraceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOAD_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
