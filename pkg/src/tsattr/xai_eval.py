"""Attribution-quality metrics and the method-comparison harness.

Both metrics perturb only non-padded entries, and their perturbation streams
are keyed by (seed, metric, pixel id) alone, never by method. Paired
method comparisons therefore share identical perturbation draws (common
random numbers).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import rng as rngmod
from .analysis import average_importance, spectral_importance, temporal_importance
from .attribution import (
    AttributionConfig,
    AttributionTensor,
    BaselineVector,
    DatasetMean,
    attribute,
    mean_baseline,
    padded_baseline,
)
from .data import TimeSeriesSample
from .errors import ConfigError, ShapeError, UndefinedStatisticError


@dataclass(frozen=True)
class EvalConfig:
    infid_perturbation: str = "gaussian"     # "gaussian" | "baseline_interp"
    infid_sigma: float = 0.1
    infid_samples: int = 128
    sens_radius: float = 0.02
    sens_samples: int = 32
    sens_norm: str = "l2"                    # "l2" | "linf"
    seed: int = 0

    def __post_init__(self):
        if self.infid_perturbation not in ("gaussian", "baseline_interp"):
            raise ConfigError(f"unknown infidelity perturbation {self.infid_perturbation!r}")
        if self.infid_sigma <= 0 or self.sens_radius <= 0:
            raise ConfigError("sigma and radius must be positive")
        if self.infid_samples < 1 or self.sens_samples < 1:
            raise ConfigError("sample counts must be >= 1")
        if self.sens_norm not in ("l2", "linf"):
            raise ConfigError(f"unknown norm {self.sens_norm!r}")


def _values_and_free(sample) -> tuple[np.ndarray, np.ndarray]:
    """Sample values plus the mask of entries a perturbation may touch."""
    if isinstance(sample, TimeSeriesSample):
        return sample.values, ~sample.pad_mask
    values = np.asarray(sample, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError("sample must be a (B, T) matrix")
    return values, np.ones_like(values, dtype=bool)


def _norm(arr: np.ndarray, kind: str) -> float:
    flat = np.asarray(arr).ravel()
    return float(np.max(np.abs(flat))) if kind == "linf" else float(np.linalg.norm(flat))


def infidelity(
    model,
    sample,
    attribution: AttributionTensor | np.ndarray,
    config: EvalConfig | None = None,
    baseline: BaselineVector | None = None,
    pixel_id: str = "",
) -> float:
    """Expected squared gap between attribution-predicted and actual output change.

    Monte-Carlo estimate of E[(I . a - (f(X) - f(X - I)))^2] over seeded
    perturbations I restricted to non-padded entries.
    """
    config = config or EvalConfig()
    values, free = _values_and_free(sample)
    raw = attribution.raw if isinstance(attribution, AttributionTensor) else np.asarray(attribution)
    if raw.shape != values.shape:
        raise ShapeError("attribution and sample shapes differ")
    rng = rngmod.stream(config.seed, "perturbation", "infidelity", pixel_id)
    n = config.infid_samples
    if config.infid_perturbation == "gaussian":
        pert = rng.normal(0.0, config.infid_sigma, size=(n,) + values.shape)
    else:
        if baseline is None:
            raise ConfigError("baseline_interp infidelity needs a baseline")
        u = rng.uniform(0.0, 1.0, size=(n, 1, 1))
        pert = u * (values - baseline.values)[None]
    pert = np.where(free[None], pert, 0.0)
    f_x = float(model.predict(values))
    f_shift = model.predict(values[None] - pert)
    dot = np.einsum("nbt,bt->n", pert, raw)
    return float(np.mean((dot - (f_x - f_shift)) ** 2))


def max_sensitivity(
    attribution_fn: Callable[[np.ndarray], AttributionTensor],
    sample,
    config: EvalConfig | None = None,
    pixel_id: str = "",
    base_attribution: AttributionTensor | None = None,
) -> float:
    """Largest relative change of the scaled attribution under small input noise.

    ``attribution_fn`` must re-run the method with its usual seed policy on
    perturbed values. Perturbations touch non-padded entries only and sit on
    the radius boundary of the chosen norm.
    """
    config = config or EvalConfig()
    values, free = _values_and_free(sample)
    base = base_attribution if base_attribution is not None else attribution_fn(values)
    ref = base.scaled
    ref_norm = _norm(ref, config.sens_norm)
    if ref_norm == 0.0:
        raise UndefinedStatisticError("sensitivity undefined: zero attribution norm")
    rng = rngmod.stream(config.seed, "perturbation", "sensitivity", pixel_id)
    worst = 0.0
    for _ in range(config.sens_samples):
        direction = np.where(free, rng.standard_normal(values.shape), 0.0)
        size = _norm(direction, config.sens_norm)
        if size == 0.0:
            continue
        perturbed = values + direction * (config.sens_radius / size)
        tensor = attribution_fn(perturbed)
        worst = max(worst, _norm(tensor.scaled - ref, config.sens_norm) / ref_norm)
    return worst


def _make_baseline(kind: str, dataset_mean: DatasetMean | None,
                   sample: TimeSeriesSample) -> BaselineVector:
    if kind == "mean_adapted":
        if dataset_mean is None:
            raise ConfigError("mean_adapted baseline needs dataset statistics")
        return mean_baseline(dataset_mean, sample)
    if kind == "padded":
        return padded_baseline(sample.n_bands, sample.n_steps, sample.pad_value)
    raise ConfigError(f"unknown baseline kind {kind!r}")


def compare_methods(
    samples: Sequence[tuple[str, TimeSeriesSample]],
    model,
    methods: Sequence[str],
    baseline_kinds: Sequence[str],
    attr_config: AttributionConfig | None = None,
    eval_config: EvalConfig | None = None,
    dataset_mean: DatasetMean | None = None,
    map_feature: tuple[int, int] | None = None,
    threads: int = 1,
) -> dict:
    """Score every method/baseline pair on every pixel.

    Returns a report with per-pixel infidelity/sensitivity scores, quartile
    summaries, dataset-level SI/TI panels per method, and (optionally) the
    per-pixel attribution map values of one (band, step) feature.
    """
    attr_config = attr_config or AttributionConfig()
    eval_config = eval_config or EvalConfig()
    scores: list[dict] = []
    importance: list[dict] = []
    maps: list[dict] = []

    def run_pixel(task):
        method, kind, pixel_id, sample = task
        baseline = _make_baseline(kind, dataset_mean, sample)

        def attr_fn(values: np.ndarray) -> AttributionTensor:
            shaped = TimeSeriesSample(
                values=values, pad_mask=sample.pad_mask,
                band_labels=sample.band_labels, pad_value=sample.pad_value,
            ) if isinstance(values, np.ndarray) else values
            return attribute(method, model, shaped, baseline, attr_config,
                             pixel_id=pixel_id)

        tensor = attr_fn(sample.values)
        infid = infidelity(model, sample, tensor, eval_config, baseline, pixel_id)
        try:
            sens = max_sensitivity(attr_fn, sample, eval_config, pixel_id,
                                   base_attribution=tensor)
        except UndefinedStatisticError:
            sens = float("nan")
        return method, kind, pixel_id, tensor, infid, sens

    tasks = [
        (method, kind, pixel_id, sample)
        for method in methods
        for kind in baseline_kinds
        for pixel_id, sample in samples
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_pixel, tasks))
    else:
        outcomes = [run_pixel(t) for t in tasks]

    by_pair: dict[tuple[str, str], list[AttributionTensor]] = {}
    for method, kind, pixel_id, tensor, infid, sens in outcomes:
        scores.append({"method": method, "baseline": kind, "metric": "infidelity",
                       "pixel_id": pixel_id, "value": infid})
        scores.append({"method": method, "baseline": kind, "metric": "sensitivity",
                       "pixel_id": pixel_id, "value": sens})
        by_pair.setdefault((method, kind), []).append(tensor)
        if map_feature is not None:
            b, t = map_feature
            maps.append({"method": method, "baseline": kind, "pixel_id": pixel_id,
                         "value": float(tensor.scaled[b, t])})

    band_labels = samples[0][1].band_labels if samples else ()
    for (method, kind), tensors in sorted(by_pair.items()):
        si = average_importance(
            [spectral_importance(t.absolute, band_labels) for t in tensors], "dataset")
        ti = average_importance(
            [temporal_importance(t.absolute) for t in tensors], "dataset")
        for vec in (si, ti):
            for label, value in zip(vec.labels, vec.values):
                importance.append({"method": method, "baseline": kind,
                                   "axis": vec.axis, "label": label,
                                   "value": float(value)})

    summary = []
    for method in methods:
        for kind in baseline_kinds:
            for metric in ("infidelity", "sensitivity"):
                vals = np.array([
                    s["value"] for s in scores
                    if s["method"] == method and s["baseline"] == kind
                    and s["metric"] == metric and np.isfinite(s["value"])
                ])
                if vals.size == 0:
                    continue
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
                summary.append({"method": method, "baseline": kind, "metric": metric,
                                "n": int(vals.size), "median": float(med),
                                "q1": float(q1), "q3": float(q3)})
    report = {"scores": scores, "summary": summary, "importance": importance}
    if map_feature is not None:
        report["maps"] = maps
    return report
