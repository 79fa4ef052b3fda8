"""The eight attribution methods, baseline constructions and a Shapley oracle.

All methods score one pixel sample at a time against a model exposing
``predict`` (batched) and, for the gradient family, ``input_gradient``.
Coalition methods substitute baseline values for "absent" features, so with
the adapted mean baseline a padded feature is replaced by an identical value
and its attribution is exactly zero.

Sampling methods draw from streams derived from (seed, method, pixel id),
which makes per-pixel parallelism independent of scheduling order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import rng as rngmod
from .analysis import normalize
from .containers import read_container, write_container
from .data import PAD_VALUE, TimeSeriesSample
from .errors import ConfigError, DataError, FormatError, IntractableError, ShapeError

ATR_MAGIC = b"ATR1"
_PREDICT_CHUNK = 4096

METHOD_NAMES = (
    "saliency",
    "input_x_gradient",
    "integrated_gradients",
    "gradient_shap",
    "occlusion",
    "shapley_value_sampling",
    "lime",
    "kernel_shap",
)


@dataclass(frozen=True)
class BaselineVector:
    """Reference input representing feature absence."""

    values: np.ndarray             # (B, T)
    kind: str                      # "mean_adapted" | "padded"
    source_mean: np.ndarray | None = None      # dataset mean for mean_adapted
    never_observed: np.ndarray | None = None   # slots padded in every dataset sample

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError("baseline values must be a (B, T) matrix")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class DatasetMean:
    """Per-slot mean over non-padded entries of the explanation dataset."""

    mean: np.ndarray               # (B, T); pad_value where never observed
    never_observed: np.ndarray     # (B, T) bool
    pad_value: float = PAD_VALUE


def compute_dataset_mean(
    values: np.ndarray, pad_mask: np.ndarray, pad_value: float = PAD_VALUE
) -> DatasetMean:
    values = np.asarray(values, dtype=np.float64)
    pad_mask = np.asarray(pad_mask, dtype=bool)
    if values.ndim != 3 or pad_mask.shape != values.shape:
        raise ShapeError("expected matching (N, B, T) value and pad tensors")
    counts = (~pad_mask).sum(axis=0)
    sums = np.where(pad_mask, 0.0, values).sum(axis=0)
    never = counts == 0
    mean = np.where(never, pad_value, sums / np.maximum(counts, 1))
    return DatasetMean(mean=mean, never_observed=never, pad_value=pad_value)


def mean_baseline(dataset: DatasetMean, sample: TimeSeriesSample) -> BaselineVector:
    """Adapt the dataset mean to one pixel: keep the pad value where it is padded."""
    if dataset.mean.shape != sample.values.shape:
        raise ShapeError("dataset mean and sample shapes differ")
    values = np.where(sample.pad_mask, sample.pad_value, dataset.mean)
    return BaselineVector(
        values=values,
        kind="mean_adapted",
        source_mean=dataset.mean,
        never_observed=dataset.never_observed,
    )


def padded_baseline(n_bands: int, n_steps: int, pad_value: float = PAD_VALUE) -> BaselineVector:
    return BaselineVector(values=np.full((n_bands, n_steps), pad_value), kind="padded")


@dataclass(frozen=True)
class AttributionConfig:
    svs_samples: int = 25
    ig_steps: int = 64
    ig_rule: str = "right"
    gradshap_samples: int = 32
    gradshap_sigma: float = 0.1
    occlusion_window: tuple[int, int] = (1, 1)
    lime_samples: int = 1000
    lime_kernel_width: float | None = None     # None -> 0.25 * sqrt(F)
    lime_ridge: float = 1e-6
    kernelshap_samples: int | None = None      # None -> 2*F + 2048
    seed: int = 0

    def __post_init__(self):
        counts = (self.svs_samples, self.ig_steps, self.gradshap_samples,
                  self.lime_samples)
        if any(c < 1 for c in counts):
            raise ConfigError("sample counts must be >= 1")
        if self.gradshap_sigma < 0:
            raise ConfigError("gradshap_sigma must be >= 0")
        if self.lime_kernel_width is not None and self.lime_kernel_width <= 0:
            raise ConfigError("lime_kernel_width must be positive")
        if self.kernelshap_samples is not None and self.kernelshap_samples < 1:
            raise ConfigError("kernelshap_samples must be >= 1")
        wb, wt = self.occlusion_window
        if wb < 1 or wt < 1:
            raise ConfigError("occlusion window dims must be >= 1")
        if self.ig_rule not in ("right", "left", "midpoint", "trapezoid"):
            raise ConfigError(f"unknown ig_rule {self.ig_rule!r}")


@dataclass(frozen=True)
class AttributionTensor:
    """Raw scores plus their scaled and absolute transforms for one pixel."""

    raw: np.ndarray
    scaled: np.ndarray
    absolute: np.ndarray
    method: str
    baseline_kind: str
    pixel_id: str = ""
    field_key: str = ""
    all_zero: bool = False

    @classmethod
    def from_raw(cls, raw: np.ndarray, method: str, baseline_kind: str,
                 pixel_id: str = "", field_key: str = "") -> "AttributionTensor":
        scaled, absolute, all_zero = normalize(raw)
        return cls(raw=np.asarray(raw, dtype=np.float64), scaled=scaled,
                   absolute=absolute, method=method, baseline_kind=baseline_kind,
                   pixel_id=pixel_id, field_key=field_key, all_zero=all_zero)


def _values_of(sample) -> np.ndarray:
    if isinstance(sample, TimeSeriesSample):
        return sample.values
    arr = np.asarray(sample, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError("sample must be a (B, T) matrix")
    return arr


def _check_baseline(values: np.ndarray, baseline: BaselineVector) -> np.ndarray:
    if baseline.values.shape != values.shape:
        raise ShapeError(
            f"baseline shape {baseline.values.shape} != sample shape {values.shape}"
        )
    return baseline.values


def _predict_chunked(model, inputs: np.ndarray) -> np.ndarray:
    out = np.empty(inputs.shape[0])
    for lo in range(0, inputs.shape[0], _PREDICT_CHUNK):
        out[lo:lo + _PREDICT_CHUNK] = model.predict(inputs[lo:lo + _PREDICT_CHUNK])
    return out


def _gradient_chunked(model, inputs: np.ndarray) -> np.ndarray:
    out = np.empty_like(inputs)
    for lo in range(0, inputs.shape[0], _PREDICT_CHUNK):
        out[lo:lo + _PREDICT_CHUNK] = model.input_gradient(inputs[lo:lo + _PREDICT_CHUNK])
    return out


# ---------------------------------------------------------------------------
# Gradient-family methods
# ---------------------------------------------------------------------------


def saliency(model, sample) -> np.ndarray:
    """Signed input gradient at the sample."""
    return model.input_gradient(_values_of(sample))


def input_x_gradient(model, sample) -> np.ndarray:
    values = _values_of(sample)
    return values * model.input_gradient(values)


def _ig_alphas(steps: int, rule: str) -> tuple[np.ndarray, np.ndarray]:
    if rule == "right":
        alphas = np.arange(1, steps + 1) / steps
        weights = np.full(steps, 1.0 / steps)
    elif rule == "left":
        alphas = np.arange(0, steps) / steps
        weights = np.full(steps, 1.0 / steps)
    elif rule == "midpoint":
        alphas = (np.arange(0, steps) + 0.5) / steps
        weights = np.full(steps, 1.0 / steps)
    else:  # trapezoid
        alphas = np.arange(0, steps + 1) / steps
        weights = np.full(steps + 1, 1.0 / steps)
        weights[0] = weights[-1] = 0.5 / steps
    return alphas, weights


def integrated_gradients(model, sample, baseline: BaselineVector,
                         steps: int = 64, rule: str = "right") -> np.ndarray:
    """Path integral of gradients from the baseline to the sample."""
    values = _values_of(sample)
    base = _check_baseline(values, baseline)
    diff = values - base
    alphas, weights = _ig_alphas(steps, rule)
    inputs = base[None] + alphas[:, None, None] * diff[None]
    grads = _gradient_chunked(model, inputs)
    avg = np.tensordot(weights, grads, axes=(0, 0))
    return diff * avg


def gradient_shap(model, sample, baseline: BaselineVector, n_samples: int,
                  sigma: float, rng: np.random.Generator) -> np.ndarray:
    """(x - base) times the expected gradient at jittered points on the path."""
    values = _values_of(sample)
    base = _check_baseline(values, baseline)
    diff = values - base
    u = rng.uniform(0.0, 1.0, size=n_samples)
    noise = rng.normal(0.0, 1.0, size=(n_samples,) + values.shape) if sigma > 0 else 0.0
    inputs = base[None] + u[:, None, None] * diff[None] + sigma * noise
    grads = _gradient_chunked(model, inputs)
    return diff * grads.mean(axis=0)


# ---------------------------------------------------------------------------
# Perturbation-family methods
# ---------------------------------------------------------------------------


def occlusion(model, sample, baseline: BaselineVector,
              window: tuple[int, int] = (1, 1)) -> np.ndarray:
    """Prediction drop when a window around each feature takes baseline values.

    Windows slide with stride one; overlapping window differences are
    averaged per feature. Windows identical to the baseline content are
    skipped, so their contribution is an exact zero.
    """
    values = _values_of(sample)
    base = _check_baseline(values, baseline)
    B, T = values.shape
    wb = min(window[0], B)
    wt = min(window[1], T)
    base_pred = float(model.predict(values))
    positions = [(b0, t0) for b0 in range(B - wb + 1) for t0 in range(T - wt + 1)]
    todo = [p for p in positions if not np.array_equal(
        values[p[0]:p[0] + wb, p[1]:p[1] + wt], base[p[0]:p[0] + wb, p[1]:p[1] + wt])]
    diffs: dict[tuple[int, int], float] = {p: 0.0 for p in positions}
    if todo:
        inputs = np.repeat(values[None], len(todo), axis=0)
        for k, (b0, t0) in enumerate(todo):
            inputs[k, b0:b0 + wb, t0:t0 + wt] = base[b0:b0 + wb, t0:t0 + wt]
        preds = _predict_chunked(model, inputs)
        for k, p in enumerate(todo):
            diffs[p] = base_pred - float(preds[k])
    raw = np.zeros((B, T))
    cover = np.zeros((B, T))
    for (b0, t0), d in diffs.items():
        raw[b0:b0 + wb, t0:t0 + wt] += d
        cover[b0:b0 + wb, t0:t0 + wt] += 1.0
    return raw / np.maximum(cover, 1.0)


def _active_features(values: np.ndarray, base: np.ndarray) -> np.ndarray:
    """Flat indices where substitution actually changes the input."""
    return np.nonzero((values != base).ravel())[0]


def _coalition_inputs(x_flat: np.ndarray, b_flat: np.ndarray, active: np.ndarray,
                      masks: np.ndarray) -> np.ndarray:
    """(M, F) inputs: baseline everywhere, sample values where the mask is on."""
    inputs = np.repeat(b_flat[None], masks.shape[0], axis=0)
    inputs[:, active] = np.where(masks, x_flat[active][None], b_flat[active][None])
    return inputs


def shapley_value_sampling(model, sample, baseline: BaselineVector,
                           n_permutations: int, rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo Shapley values over random feature orderings.

    Walks each permutation from the baseline, crediting every feature with
    its marginal prediction change. Features identical to the baseline have
    identically zero marginals and are credited zero without evaluation.
    """
    values = _values_of(sample)
    base = _check_baseline(values, baseline)
    shape = values.shape
    x_flat, b_flat = values.ravel(), base.ravel()
    active = _active_features(values, base)
    raw = np.zeros(x_flat.size)
    A = active.size
    if A == 0:
        return raw.reshape(shape)
    rows_per_perm = A + 1
    perm_chunk = max(1, _PREDICT_CHUNK // rows_per_perm)
    done = 0
    while done < n_permutations:
        n_chunk = min(perm_chunk, n_permutations - done)
        orders = [rng.permutation(active) for _ in range(n_chunk)]
        inputs = np.empty((n_chunk * rows_per_perm, x_flat.size))
        for p, order in enumerate(orders):
            row = p * rows_per_perm
            walk = b_flat.copy()
            inputs[row] = walk
            for k, feat in enumerate(order):
                walk[feat] = x_flat[feat]
                inputs[row + k + 1] = walk
        preds = _predict_chunked(model, inputs.reshape((-1,) + shape))
        for p, order in enumerate(orders):
            row = p * rows_per_perm
            marginals = np.diff(preds[row:row + rows_per_perm])
            np.add.at(raw, order, marginals)
        done += n_chunk
    raw /= n_permutations
    return raw.reshape(shape)


def _popcounts(n_bits: int) -> np.ndarray:
    pc = np.zeros(1 << n_bits, dtype=np.int64)
    for j in range(n_bits):
        pc[1 << j:1 << (j + 1)] = pc[:1 << j] + 1
    return pc


def exact_shapley(model, sample, baseline: BaselineVector,
                  max_features: int = 20) -> np.ndarray:
    """Exact Shapley values by full coalition enumeration (B*T <= 20)."""
    values = _values_of(sample)
    base = _check_baseline(values, baseline)
    F = values.size
    if F > max_features:
        raise IntractableError(f"exact Shapley needs B*T <= {max_features}, got {F}")
    shape = values.shape
    x_flat, b_flat = values.ravel(), base.ravel()
    active = _active_features(values, base)
    raw = np.zeros(F)
    A = active.size
    if A == 0:
        return raw.reshape(shape)
    n_masks = 1 << A
    mask_ids = np.arange(n_masks, dtype=np.int64)
    bits = (mask_ids[:, None] >> np.arange(A)[None, :]) & 1
    inputs = _coalition_inputs(x_flat, b_flat, active, bits.astype(bool))
    v = _predict_chunked(model, inputs.reshape((-1,) + shape))
    pc = _popcounts(A)
    # weight(s) = s! (A-1-s)! / A! for the coalition size s excluding the player
    fact = [math.factorial(k) for k in range(A + 1)]
    w = np.array([fact[s] * fact[A - 1 - s] / fact[A] for s in range(A)])
    for j in range(A):
        without = mask_ids[(mask_ids >> j) & 1 == 0]
        with_j = without + (1 << j)
        raw[active[j]] = float(np.sum(w[pc[without]] * (v[with_j] - v[without])))
    return raw.reshape(shape)


def _ridge_wls(design: np.ndarray, targets: np.ndarray, weights: np.ndarray,
               ridge: float, penalize: np.ndarray | None = None) -> np.ndarray:
    """Weighted least squares with a small ridge on selected coefficients."""
    wd = design * weights[:, None]
    A = design.T @ wd
    if ridge > 0:
        diag = np.ones(A.shape[0]) if penalize is None else penalize.astype(np.float64)
        A = A + ridge * np.diag(diag)
    rhs = wd.T @ targets
    try:
        return np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, rhs, rcond=None)[0]


def lime(model, sample, baseline: BaselineVector, n_samples: int,
         kernel_width: float | None, rng: np.random.Generator,
         ridge: float = 1e-6) -> np.ndarray:
    """Weighted linear surrogate over random feature-presence masks.

    Masked features take baseline values. Mask weights follow an exponential
    kernel over the Hamming distance to the all-present mask,
    exp(-d / width^2). When every mask fits the budget the full enumeration
    is used instead of sampling.
    """
    values = _values_of(sample)
    base = _check_baseline(values, baseline)
    shape = values.shape
    x_flat, b_flat = values.ravel(), base.ravel()
    active = _active_features(values, base)
    raw = np.zeros(x_flat.size)
    A = active.size
    if A == 0:
        return raw.reshape(shape)
    if kernel_width is None:
        kernel_width = 0.25 * np.sqrt(values.size)
    if A <= 20 and (1 << A) <= n_samples:
        masks = ((np.arange(1 << A)[:, None] >> np.arange(A)[None, :]) & 1).astype(bool)
    else:
        masks = rng.random((n_samples, A)) < 0.5
    inputs = _coalition_inputs(x_flat, b_flat, active, masks)
    preds = _predict_chunked(model, inputs.reshape((-1,) + shape))
    hamming = (~masks).sum(axis=1).astype(np.float64)
    weights = np.exp(-hamming / kernel_width ** 2)
    design = np.hstack([masks.astype(np.float64), np.ones((masks.shape[0], 1))])
    penalize = np.append(np.ones(A), 0.0)   # leave the intercept unpenalized
    coef = _ridge_wls(design, preds, weights, ridge, penalize)
    raw[active] = coef[:A]
    return raw.reshape(shape)


def _shapley_kernel_sizes(A: int) -> np.ndarray:
    """Total kernel mass per coalition size s in 1..A-1."""
    sizes = np.arange(1, A)
    return (A - 1) / (sizes * (A - sizes))


def kernel_shap(model, sample, baseline: BaselineVector, n_samples: int | None,
                rng: np.random.Generator) -> np.ndarray:
    """Shapley values via the weighted regression formulation.

    Solves the Shapley-kernel weighted least squares with the efficiency
    constraint sum(phi) = f(x) - f(baseline) imposed exactly. Enumerates all
    proper coalitions when they fit the sampling budget; with enumeration the
    result equals exact Shapley values.
    """
    values = _values_of(sample)
    base = _check_baseline(values, baseline)
    shape = values.shape
    x_flat, b_flat = values.ravel(), base.ravel()
    active = _active_features(values, base)
    raw = np.zeros(x_flat.size)
    A = active.size
    if A == 0:
        return raw.reshape(shape)
    if n_samples is None:
        n_samples = 2 * values.size + 2048
    v_empty = float(model.predict(base))
    v_full = float(model.predict(values))
    delta = v_full - v_empty
    if A == 1:
        raw[active[0]] = delta
        return raw.reshape(shape)

    if A <= 24 and (1 << A) - 2 <= n_samples:
        mask_ids = np.arange(1, (1 << A) - 1, dtype=np.int64)
        masks = ((mask_ids[:, None] >> np.arange(A)[None, :]) & 1).astype(bool)
        sizes = masks.sum(axis=1)
        n_choose = np.array([math.comb(A, int(s)) for s in sizes], dtype=np.float64)
        weights = (A - 1) / (n_choose * sizes * (A - sizes))
    else:
        size_mass = _shapley_kernel_sizes(A)
        probs = size_mass / size_mass.sum()
        drawn_sizes = rng.choice(np.arange(1, A), size=n_samples, p=probs)
        masks = np.zeros((n_samples, A), dtype=bool)
        for i, s in enumerate(drawn_sizes):
            masks[i, rng.choice(A, size=int(s), replace=False)] = True
        weights = np.ones(n_samples)
    inputs = _coalition_inputs(x_flat, b_flat, active, masks)
    preds = _predict_chunked(model, inputs.reshape((-1,) + shape))
    y = preds - v_empty
    Z = masks.astype(np.float64)
    wz = Z * weights[:, None]
    gram = Z.T @ wz
    rhs = wz.T @ y
    # KKT system for min ||y - Z phi||_W subject to 1' phi = delta
    kkt = np.zeros((A + 1, A + 1))
    kkt[:A, :A] = gram
    kkt[:A, A] = 1.0
    kkt[A, :A] = 1.0
    rhs_full = np.append(rhs, delta)
    try:
        solution = np.linalg.solve(kkt, rhs_full)
    except np.linalg.LinAlgError:
        solution = np.linalg.lstsq(kkt, rhs_full, rcond=None)[0]
    phi = solution[:A]
    # Re-impose the constraint exactly against round-off.
    phi = phi + (delta - phi.sum()) / A
    raw[active] = phi
    return raw.reshape(shape)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def attribute(
    method: str,
    model,
    sample,
    baseline: BaselineVector | None,
    config: AttributionConfig | None = None,
    pixel_id: str = "",
    field_key: str = "",
) -> AttributionTensor:
    """Run one attribution method under the shared seeding policy."""
    if method not in METHOD_NAMES:
        raise ConfigError(f"unknown attribution method {method!r}")
    config = config or AttributionConfig()
    values = _values_of(sample)
    needs_baseline = method not in ("saliency", "input_x_gradient")
    if needs_baseline and baseline is None:
        raise ConfigError(f"method {method!r} requires a baseline")
    rng = rngmod.stream(config.seed, "attribution", method, pixel_id)
    if method == "saliency":
        raw = saliency(model, values)
    elif method == "input_x_gradient":
        raw = input_x_gradient(model, values)
    elif method == "integrated_gradients":
        raw = integrated_gradients(model, values, baseline, config.ig_steps, config.ig_rule)
    elif method == "gradient_shap":
        raw = gradient_shap(model, values, baseline, config.gradshap_samples,
                            config.gradshap_sigma, rng)
    elif method == "occlusion":
        raw = occlusion(model, values, baseline, config.occlusion_window)
    elif method == "shapley_value_sampling":
        raw = shapley_value_sampling(model, values, baseline, config.svs_samples, rng)
    elif method == "lime":
        raw = lime(model, values, baseline, config.lime_samples,
                   config.lime_kernel_width, rng, config.lime_ridge)
    else:
        raw = kernel_shap(model, values, baseline, config.kernelshap_samples, rng)
    kind = baseline.kind if baseline is not None else "none"
    return AttributionTensor.from_raw(raw, method=method, baseline_kind=kind,
                                      pixel_id=pixel_id, field_key=field_key)


# ---------------------------------------------------------------------------
# Per-field persistence (.atr)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldAttribution:
    """All attribution tensors of one field in presence (row-major) order."""

    field_id: str
    season: str
    method: str
    baseline_kind: str
    band_labels: tuple[str, ...]
    presence: np.ndarray          # (H, W) bool
    raw: np.ndarray               # (N, B, T)
    scaled: np.ndarray
    absolute: np.ndarray
    all_zero: np.ndarray          # (N,) bool
    extra: Mapping[str, object] | None = None

    def key(self) -> str:
        return f"{self.field_id}:{self.season}"

    @property
    def n_pixels(self) -> int:
        return self.raw.shape[0]

    def pixel_ids(self) -> list[str]:
        coords = np.argwhere(self.presence)
        return [f"{self.key()}:{r}:{c}" for r, c in coords]

    def tensor_at(self, index: int) -> AttributionTensor:
        return AttributionTensor(
            raw=self.raw[index],
            scaled=self.scaled[index],
            absolute=self.absolute[index],
            method=self.method,
            baseline_kind=self.baseline_kind,
            pixel_id=self.pixel_ids()[index],
            field_key=self.key(),
            all_zero=bool(self.all_zero[index]),
        )


def stack_field_attribution(
    field_id: str,
    season: str,
    presence: np.ndarray,
    band_labels: Sequence[str],
    tensors: Sequence[AttributionTensor],
    extra: Mapping[str, object] | None = None,
) -> FieldAttribution:
    if int(np.asarray(presence).sum()) != len(tensors):
        raise DataError("tensor count does not match present pixel count")
    if not tensors:
        raise DataError("no tensors to stack")
    return FieldAttribution(
        field_id=field_id,
        season=season,
        method=tensors[0].method,
        baseline_kind=tensors[0].baseline_kind,
        band_labels=tuple(band_labels),
        presence=np.asarray(presence, dtype=bool),
        raw=np.stack([t.raw for t in tensors]),
        scaled=np.stack([t.scaled for t in tensors]),
        absolute=np.stack([t.absolute for t in tensors]),
        all_zero=np.array([t.all_zero for t in tensors], dtype=bool),
        extra=extra,
    )


def save_field_attribution(fa: FieldAttribution, path: str | Path) -> None:
    meta = {
        "field_id": fa.field_id,
        "season": fa.season,
        "method": fa.method,
        "baseline_kind": fa.baseline_kind,
        "band_labels": list(fa.band_labels),
        "extra": dict(fa.extra or {}),
    }
    write_container(path, ATR_MAGIC, meta, {
        "presence": fa.presence,
        "raw": fa.raw,
        "scaled": fa.scaled,
        "absolute": fa.absolute,
        "all_zero": fa.all_zero,
    })


def load_field_attribution(path: str | Path) -> FieldAttribution:
    meta, arrays = read_container(path, ATR_MAGIC)
    try:
        return FieldAttribution(
            field_id=str(meta["field_id"]),
            season=str(meta["season"]),
            method=str(meta["method"]),
            baseline_kind=str(meta["baseline_kind"]),
            band_labels=tuple(meta["band_labels"]),
            presence=arrays["presence"],
            raw=arrays["raw"],
            scaled=arrays["scaled"],
            absolute=arrays["absolute"],
            all_zero=arrays["all_zero"],
            extra=meta.get("extra") or None,
        )
    except KeyError as exc:
        raise FormatError(f"{path}: bad attribution container: {exc}") from exc
