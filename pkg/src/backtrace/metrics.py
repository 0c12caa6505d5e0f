"""Attribution-evaluation metrics with seeded, reproducible perturbations.

Every random draw flows from one explicitly pinned counter-based generator
(Philox 4x64-10, as shipped by numpy) keyed by the config seed; per-sample
streams use seed XOR sample-index and per-layer streams use a second key
word, so parallel and serial evaluation see identical streams.  See
docs/determinism.md.

Perturbation curves always include the endpoints 0 and 1 and are scored by
the trapezoid rule.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AllZeroAttribution, ShapeMismatch
from .forward import forward
from .model import GraphModel

_MASK64 = (1 << 64) - 1

NORMS = {
    "l1": lambda v: float(np.abs(v).sum()),
    "l2": lambda v: float(np.sqrt((v.astype(np.float64) ** 2).sum())),
    "linf": lambda v: float(np.abs(v).max()) if v.size else 0.0,
}


def philox_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """The package-wide PRNG: Philox keyed by (seed, stream)."""
    return np.random.Generator(np.random.Philox(key=[seed & _MASK64, stream & _MASK64]))


def sample_stream(seed: int, sample_index: int) -> np.random.Generator:
    """Per-sample stream: seed XOR sample index, so order of evaluation
    cannot matter."""
    return philox_stream((seed ^ sample_index) & _MASK64)


def parallel_map(fn, items):
    """Order-preserving map over samples, fanned out when BACKTRACE_THREADS > 1."""
    workers = int(os.environ.get("BACKTRACE_THREADS", "1") or "1")
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class PerturbationConfig:
    """Knobs the perturbation metrics leave open, pinned in one place."""

    seed: int = 0
    baseline_value: float | int = 0
    steps: int = 20
    subset_fraction: float = 0.2
    runs: int = 100
    radius: float = 0.02
    samples_per_point: int = 10
    norm: str = "l2"

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if not 0 < self.subset_fraction < 1:
            raise ValueError("subset_fraction must be in (0, 1)")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.runs < 1 or self.samples_per_point < 1:
            raise ValueError("runs and samples_per_point must be >= 1")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {sorted(NORMS)}")


@dataclass
class MetricReport:
    """One metric outcome with its full curve and the config that made it."""

    name: str
    value: float
    curve: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.curve:
            xs = [x for x, _ in self.curve]
            if xs[0] != 0.0 or xs[-1] != 1.0 or any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("curve x values must increase strictly from 0 to 1")

    def to_dict(self):
        return {
            "name": self.name,
            "value": self.value,
            "curve": [[float(x), float(y)] for x, y in self.curve],
            "config": self.config,
            "seed": self.seed,
            "flags": self.flags,
        }


def _auc(curve):
    xs = np.array([x for x, _ in curve], dtype=np.float64)
    ys = np.array([y for _, y in curve], dtype=np.float64)
    return float(np.trapezoid(ys, xs))


def _target_score(model, sample, target=None):
    prediction, _ = forward(model, sample)
    flat = np.asarray(prediction, dtype=np.float64).reshape(-1)
    if target is None:
        target = int(np.argmax(flat))
    return target, float(flat[target])


def _fractions(steps, n):
    """Perturbed-feature counts at evenly spaced fractions including 0 and 1."""
    fracs = np.linspace(0.0, 1.0, steps)
    counts = np.floor(fracs * n + 0.5).astype(int)
    return fracs, counts


def descending_order(attribution):
    """Most relevant first; equal values keep their index order."""
    flat = np.asarray(attribution, dtype=np.float64).reshape(-1)
    return np.argsort(-flat, kind="stable")


def ascending_order(attribution):
    flat = np.asarray(attribution, dtype=np.float64).reshape(-1)
    return np.argsort(flat, kind="stable")


def _perturbation_curve(model, sample, order, counts, fracs, baseline, target):
    flat = np.asarray(sample, dtype=np.float32).reshape(-1)
    curve = []
    for frac, k in zip(fracs, counts):
        perturbed = flat.copy()
        perturbed[order[:k]] = baseline
        _, score = _target_score(model, perturbed.reshape(np.asarray(sample).shape), target)
        curve.append((float(frac), score))
    return curve


def pixel_flipping(model: GraphModel, sample, attribution, cfg: PerturbationConfig,
                   target=None) -> MetricReport:
    """Replace the most-attributed features first and watch the score decay.

    The scalar is the trapezoid area under the target-score curve: faster
    decay (a better-ordered attribution) gives a lower area.
    """
    sample = np.asarray(sample, dtype=np.float32)
    attribution = np.asarray(attribution, dtype=np.float64)
    if attribution.shape != sample.shape:
        raise ShapeMismatch(
            f"attribution shape {attribution.shape} != sample shape {sample.shape}"
        )
    target, _ = _target_score(model, sample, target)
    order = descending_order(attribution)
    fracs, counts = _fractions(cfg.steps, sample.size)
    curve = _perturbation_curve(model, sample, order, counts, fracs,
                                float(cfg.baseline_value), target)
    return MetricReport("pixel_flipping", _auc(curve), curve, asdict(cfg), cfg.seed)


def faithfulness_correlation(model: GraphModel, sample, attribution,
                             cfg: PerturbationConfig, target=None) -> MetricReport:
    """Correlate attribution mass of random subsets with the score drop they cause."""
    sample = np.asarray(sample, dtype=np.float32)
    attribution = np.asarray(attribution, dtype=np.float64)
    if attribution.shape != sample.shape:
        raise ShapeMismatch(
            f"attribution shape {attribution.shape} != sample shape {sample.shape}"
        )
    n = sample.size
    subset_size = max(1, math.ceil(cfg.subset_fraction * n))
    target, base_score = _target_score(model, sample, target)
    rng = philox_stream(cfg.seed)
    flat = sample.reshape(-1)
    attr_flat = attribution.reshape(-1)
    masses = np.empty(cfg.runs)
    drops = np.empty(cfg.runs)
    for run in range(cfg.runs):
        subset = rng.choice(n, size=subset_size, replace=False)
        perturbed = flat.copy()
        perturbed[subset] = float(cfg.baseline_value)
        _, score = _target_score(model, perturbed.reshape(sample.shape), target)
        masses[run] = attr_flat[subset].sum()
        drops[run] = base_score - score
    flags = {}
    if masses.std() <= 1e-12 or drops.std() <= 1e-12:
        value = 0.0
        flags["degenerate_variance"] = True
    else:
        value = float(np.corrcoef(masses, drops)[0, 1])
    return MetricReport("faithfulness_correlation", value, [], asdict(cfg), cfg.seed, flags)


def max_sensitivity(model: GraphModel, sample, explain_fn, cfg: PerturbationConfig) -> MetricReport:
    """Worst-case explanation change under small uniform input perturbations.

    Distances use the configured norm and are normalized by the norm of the
    unperturbed explanation when it is nonzero.
    """
    sample = np.asarray(sample, dtype=np.float32)
    norm = NORMS[cfg.norm]
    base = np.asarray(explain_fn(sample), dtype=np.float64)
    base_norm = norm(base)
    rng = philox_stream(cfg.seed)
    worst = 0.0
    for _ in range(cfg.samples_per_point):
        delta = rng.uniform(-cfg.radius, cfg.radius, size=sample.shape)
        perturbed = np.asarray(explain_fn((sample + delta).astype(np.float32)), dtype=np.float64)
        distance = norm(perturbed - base)
        if base_norm > 0:
            distance /= base_norm
        worst = max(worst, distance)
    return MetricReport("max_sensitivity", worst, [], asdict(cfg), cfg.seed)


def morf_lerf(model: GraphModel, token_sample, attribution, cfg: PerturbationConfig,
              target=None):
    """Token-removal curves, most relevant first and least relevant first.

    Returns (morf_report, lerf_report, delta) where delta is the LeRF area
    minus the MoRF area; a positive delta means the attribution separates
    important tokens from unimportant ones.
    """
    tokens = np.asarray(token_sample)
    attribution = np.asarray(attribution, dtype=np.float64)
    if tokens.ndim != 1 or attribution.shape != tokens.shape:
        raise ShapeMismatch(
            f"attribution shape {attribution.shape} != token shape {tokens.shape}"
        )
    baseline = int(cfg.baseline_value)
    target, _ = _target_score(model, tokens, target)
    fracs, counts = _fractions(cfg.steps, tokens.size)

    def curve_for(order):
        curve = []
        for frac, k in zip(fracs, counts):
            perturbed = tokens.copy()
            perturbed[order[:k]] = baseline
            _, score = _target_score(model, perturbed, target)
            curve.append((float(frac), score))
        return curve

    morf_curve = curve_for(descending_order(attribution))
    lerf_curve = curve_for(ascending_order(attribution))
    morf = MetricReport("morf", _auc(morf_curve), morf_curve, asdict(cfg), cfg.seed)
    lerf = MetricReport("lerf", _auc(lerf_curve), lerf_curve, asdict(cfg), cfg.seed)
    return morf, lerf, lerf.value - morf.value


def complexity(attribution) -> float:
    """Shannon entropy (natural log) of the normalized absolute attribution."""
    magnitudes = np.abs(np.asarray(attribution, dtype=np.float64)).reshape(-1)
    total = magnitudes.sum()
    if total == 0:
        raise AllZeroAttribution("complexity of an all-zero attribution is undefined")
    p = magnitudes / total
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def _pearson_abs(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.std() <= 1e-12 or b.std() <= 1e-12:
        return 0.0
    return abs(float(np.corrcoef(a, b)[0, 1]))


def mprt(model: GraphModel, samples, explain_fn, cfg: PerturbationConfig):
    """Per-layer parameter-randomization test.

    Each parameterized layer is independently re-drawn from a seeded normal
    matching that layer's own mean/std, and the score is the mean absolute
    Pearson correlation between explanations before and after.  Lower is
    better: 1.0 means the explanation ignores that layer's parameters.
    Returns one report per layer plus a final ``mprt_mean`` report.
    """
    samples = list(samples)
    param_nodes = [node for node in model.nodes if node.params]
    originals = [np.asarray(explain_fn(model, s), dtype=np.float64) for s in samples]
    reports = []
    layer_scores = []
    for layer_index, node in enumerate(param_nodes):
        rng = philox_stream(cfg.seed, stream=layer_index + 1)
        new_params = {}
        for name, arr in node.params.items():
            mean, std = float(arr.mean()), float(arr.std())
            new_params[name] = rng.normal(mean, std, size=arr.shape).astype(np.float32)
        randomized = model.with_node_params(node.id, new_params)
        corrs = [
            _pearson_abs(orig, explain_fn(randomized, s))
            for orig, s in zip(originals, samples)
        ]
        score = float(np.mean(corrs))
        layer_scores.append(score)
        reports.append(
            MetricReport(f"mprt[{node.id}]", score, [], asdict(cfg), cfg.seed)
        )
    reports.append(
        MetricReport("mprt_mean", float(np.mean(layer_scores)), [], asdict(cfg), cfg.seed)
    )
    return reports


def random_attribution_baseline(shape, seed: int) -> np.ndarray:
    """Seeded uniform(-1, 1) attribution used as the floor to beat."""
    rng = philox_stream(seed)
    return rng.uniform(-1.0, 1.0, size=shape).astype(np.float32)
