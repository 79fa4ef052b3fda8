"""Attribution post-processing: normalization, importances, statistics, PCA.

Everything here is a pure function. Conservation checks use ``math.fsum``
over the underlying per-feature entries; fsum returns the correctly rounded
exact sum, which makes the totals independent of grouping and association
order. That is the documented summation order for all exact-equality
invariants.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import special

from .data import GrowthStageSchedule
from .errors import DataError, NumericError, ShapeError, UndefinedStatisticError

MODALITY_PREFIXES = ("s2", "soil", "dem", "weather")


def normalize(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Scale raw attributions so total absolute attribution equals one.

    Returns (scaled, absolute, all_zero). An all-zero raw tensor cannot be
    scaled; it is passed through as zeros and flagged.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if not np.isfinite(raw).all():
        raise NumericError("raw attributions contain non-finite values")
    denom = np.abs(raw).sum()
    if denom == 0.0:
        return np.zeros_like(raw), np.zeros_like(raw), True
    scaled = raw / denom
    return scaled, np.abs(scaled), False


def conservation_total(entries: np.ndarray) -> float:
    """Correctly rounded exact sum of the entries (grouping-independent)."""
    return math.fsum(np.asarray(entries, dtype=np.float64).ravel().tolist())


@dataclass(frozen=True)
class ImportanceVector:
    """Non-negative importances along one axis (band, step, stage, modality)."""

    axis: str                      # spectral | temporal | growth_stage | modality
    labels: tuple[str, ...]
    values: np.ndarray
    level: str = "pixel"           # pixel | field | dataset

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or len(self.labels) != values.size:
            raise ShapeError("labels and values must be 1-D and the same length")
        if (values < 0).any():
            raise DataError("importance values must be non-negative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", tuple(self.labels))

    def total(self) -> float:
        return conservation_total(self.values)


@dataclass(frozen=True)
class ReferenceDistribution:
    """Reference importance vector plus how it was constructed."""

    vector: ImportanceVector
    construction: str              # "all_fields" | "top_n:N" | "score_threshold:T"


def spectral_importance(absolute: np.ndarray, band_labels: Sequence[str],
                        level: str = "pixel") -> ImportanceVector:
    """Per-band importance: sum of absolute normalized attributions over time."""
    absolute = np.asarray(absolute, dtype=np.float64)
    values = np.array([math.fsum(absolute[b].tolist()) for b in range(absolute.shape[0])])
    return ImportanceVector(axis="spectral", labels=tuple(band_labels), values=values, level=level)


def temporal_importance(absolute: np.ndarray, level: str = "pixel") -> ImportanceVector:
    """Per-step importance: sum of absolute normalized attributions over bands."""
    absolute = np.asarray(absolute, dtype=np.float64)
    labels = tuple(f"t{t:02d}" for t in range(absolute.shape[1]))
    values = np.array([math.fsum(absolute[:, t].tolist()) for t in range(absolute.shape[1])])
    return ImportanceVector(axis="temporal", labels=labels, values=values, level=level)


def aggregate_growth_stages(
    absolute_or_ti: np.ndarray,
    schedule: GrowthStageSchedule,
    padded_steps: Sequence[int] | None = None,
    level: str = "pixel",
) -> ImportanceVector:
    """Sum temporal importance over each stage's time-step set.

    Accepts either the (B, T) absolute attribution matrix or an already
    reduced (T,) temporal importance vector. When ``padded_steps`` is given,
    the schedule must cover exactly the remaining steps.
    """
    arr = np.asarray(absolute_or_ti, dtype=np.float64)
    if arr.ndim == 2:
        ti = np.array([math.fsum(arr[:, t].tolist()) for t in range(arr.shape[1])])
    elif arr.ndim == 1:
        ti = arr
    else:
        raise ShapeError("expected a (B,T) matrix or a (T,) vector")
    T = ti.size
    covered = schedule.covered_steps()
    out_of_range = [t for t in covered if t >= T]
    if out_of_range:
        raise DataError(f"schedule steps {sorted(out_of_range)} beyond series length {T}")
    if padded_steps is not None:
        expected = set(range(T)) - {int(t) for t in padded_steps}
        if covered != expected:
            raise DataError(
                f"schedule covers {sorted(covered)} but non-padded steps are {sorted(expected)}"
            )
    values = np.array([
        math.fsum(ti[list(steps)].tolist()) if steps else 0.0
        for _, steps in schedule.stages
    ])
    return ImportanceVector(
        axis="growth_stage", labels=schedule.stage_names, values=values, level=level
    )


def modality_share(
    absolute: np.ndarray,
    band_labels: Sequence[str],
    s2_only_renormalize: bool = False,
) -> ImportanceVector:
    """Total importance per modality prefix (s2:, soil:, dem:, weather:).

    With ``s2_only_renormalize`` the satellite rows are rescaled to sum to
    one, the convention used when comparing against satellite-only runs.
    """
    absolute = np.asarray(absolute, dtype=np.float64)
    groups: dict[str, list[int]] = {}
    for b, label in enumerate(band_labels):
        prefix, _, rest = label.partition(":")
        if not rest or prefix not in MODALITY_PREFIXES:
            raise DataError(f"band label {label!r} lacks a known modality prefix")
        groups.setdefault(prefix, []).append(b)
    if s2_only_renormalize:
        rows = groups.get("s2", [])
        total = math.fsum(absolute[rows].ravel().tolist())
        if total == 0.0:
            raise UndefinedStatisticError("satellite attributions are all zero")
        labels = tuple(band_labels[b] for b in rows)
        values = np.array([math.fsum(absolute[b].tolist()) / total for b in rows])
        return ImportanceVector(axis="modality", labels=labels, values=values)
    labels = tuple(p for p in MODALITY_PREFIXES if p in groups)
    values = np.array([
        math.fsum(absolute[groups[p]].ravel().tolist()) for p in labels
    ])
    return ImportanceVector(axis="modality", labels=labels, values=values)


def average_importance(vectors: Sequence[ImportanceVector], level: str,
                       weights: Sequence[float] | None = None) -> ImportanceVector:
    """Mean of per-pixel (or per-field) vectors, optionally weighted."""
    if not vectors:
        raise DataError("no vectors to average")
    first = vectors[0]
    for v in vectors[1:]:
        if v.axis != first.axis or v.labels != first.labels:
            raise DataError("importance vectors disagree on axis or labels")
    stack = np.stack([v.values for v in vectors])
    if weights is None:
        mean = stack.mean(axis=0)
    else:
        w = np.asarray(weights, dtype=np.float64)
        mean = (stack * w[:, None]).sum(axis=0) / w.sum()
    return ImportanceVector(axis=first.axis, labels=first.labels, values=mean, level=level)


def attribution_map_std(
    scaled_stack: np.ndarray, top_k: int = 5
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Per-feature population std of scaled attributions across a field's pixels.

    Returns the (B, T) sigma grid and the top-k (band, step) pairs by sigma,
    ties broken lexicographically.
    """
    scaled_stack = np.asarray(scaled_stack, dtype=np.float64)
    if scaled_stack.ndim != 3:
        raise ShapeError("expected a (N, B, T) stack of scaled attributions")
    if scaled_stack.shape[0] < 2:
        raise UndefinedStatisticError("attribution-map std needs at least 2 pixels")
    sigma = scaled_stack.std(axis=0)
    order = np.lexsort((
        np.tile(np.arange(sigma.shape[1]), sigma.shape[0]),
        np.repeat(np.arange(sigma.shape[0]), sigma.shape[1]),
        -sigma.ravel(),
    ))
    top = [(int(i // sigma.shape[1]), int(i % sigma.shape[1])) for i in order[:top_k]]
    return sigma, top


def cosine_similarity(u: ImportanceVector, v: ImportanceVector) -> float:
    if u.axis != v.axis or u.labels != v.labels:
        raise DataError("cosine similarity requires matching axis and labels")
    nu = float(np.linalg.norm(u.values))
    nv = float(np.linalg.norm(v.values))
    if nu == 0.0 or nv == 0.0:
        raise UndefinedStatisticError("cosine similarity undefined for a zero vector")
    value = float(u.values @ v.values) / (nu * nv)
    return min(1.0, max(-1.0, value))


def distance_to_reference(
    vector: ImportanceVector, reference: ReferenceDistribution, metric: str = "euclidean"
) -> float:
    ref = reference.vector
    if vector.axis != ref.axis or vector.labels != ref.labels:
        raise DataError("vector and reference disagree on axis or labels")
    if metric == "euclidean":
        return float(np.linalg.norm(vector.values - ref.values))
    if metric == "cosine":
        return 1.0 - cosine_similarity(vector, ref)
    raise DataError(f"unknown distance metric {metric!r}")


def pearson_with_pvalue(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Pearson r and the two-sided p-value of the t statistic.

    p uses Student's t with n-2 dof, evaluated through the regularized
    incomplete beta function.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError("inputs must be 1-D and the same length")
    n = x.size
    if n < 3:
        raise UndefinedStatisticError("correlation needs at least 3 points")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise NumericError("correlation inputs must be finite")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt((xc ** 2).sum()))
    sy = float(np.sqrt((yc ** 2).sum()))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedStatisticError("correlation undefined: zero variance")
    r = float((xc @ yc) / (sx * sy))
    r = min(1.0, max(-1.0, r))
    dof = n - 2
    if abs(r) == 1.0:
        return r, 0.0
    # two-sided: P(|T| > t) = I_{dof/(dof+t^2)}(dof/2, 1/2)
    t2 = dof * r * r / (1.0 - r * r)
    p = float(special.betainc(dof / 2.0, 0.5, dof / (dof + t2)))
    return r, p


def correlate_with_performance(
    distances: Sequence[float], r2_scores: Sequence[float]
) -> dict[str, float]:
    """Pearson correlation and t-test between attribution distances and R^2."""
    r, p = pearson_with_pvalue(distances, r2_scores)
    return {"pearson_r": r, "p_value": p}


def build_reference(
    field_vectors: Mapping[str, ImportanceVector],
    r2_scores: Mapping[str, float],
    construction: str,
    pixel_counts: Mapping[str, int] | None = None,
) -> ReferenceDistribution:
    """Reference vector from all fields, the best N, or fields above a threshold.

    Averages are weighted by pixel counts when provided, which makes the
    all-fields reference the mean over all explained data points.
    """
    keys = sorted(field_vectors)
    if construction == "all_fields":
        chosen = keys
    elif construction.startswith("top_n:"):
        n = int(construction.split(":", 1)[1])
        if n < 1:
            raise DataError("top_n must be >= 1")
        chosen = sorted(keys, key=lambda k: (-r2_scores[k], k))[:n]
    elif construction.startswith("score_threshold:"):
        tau = float(construction.split(":", 1)[1])
        chosen = [k for k in keys if r2_scores[k] >= tau]
        if not chosen:
            raise DataError(f"no field reaches the R^2 threshold {tau}")
    else:
        raise DataError(f"unknown reference construction {construction!r}")
    weights = None
    if pixel_counts is not None:
        weights = [pixel_counts[k] for k in chosen]
    vector = average_importance([field_vectors[k] for k in chosen], "dataset", weights)
    return ReferenceDistribution(vector=vector, construction=construction)


DEFAULT_REFERENCE_CONSTRUCTIONS = (
    "all_fields",
    "top_n:3", "top_n:5", "top_n:10", "top_n:15",
    "score_threshold:0.4", "score_threshold:0.5", "score_threshold:0.6",
)


def correlation_report(
    field_vectors_by_kind: Mapping[str, Mapping[str, ImportanceVector]],
    r2_scores: Mapping[str, float],
    constructions: Sequence[str] = DEFAULT_REFERENCE_CONSTRUCTIONS,
    pixel_counts: Mapping[str, int] | None = None,
    metric: str = "euclidean",
) -> list[dict]:
    """Correlation/t-test rows for every (temporal dimension, reference) pair.

    ``field_vectors_by_kind`` maps a temporal-dimension name (e.g. "monthly",
    "growth_stage") to the per-field importance vectors of that kind.
    """
    rows = []
    for kind in sorted(field_vectors_by_kind):
        vectors = field_vectors_by_kind[kind]
        keys = sorted(vectors)
        for construction in constructions:
            try:
                ref = build_reference(vectors, r2_scores, construction, pixel_counts)
                distances = [distance_to_reference(vectors[k], ref, metric) for k in keys]
                stats = correlate_with_performance(distances, [r2_scores[k] for k in keys])
                rows.append({
                    "temporal_dimension": kind,
                    "reference": construction,
                    "n_fields": len(keys),
                    "pearson_r": stats["pearson_r"],
                    "p_value": stats["p_value"],
                })
            except DataError as exc:
                rows.append({
                    "temporal_dimension": kind,
                    "reference": construction,
                    "n_fields": len(keys),
                    "error": str(exc),
                })
    return rows


def pca_project(
    vectors: Sequence[np.ndarray] | np.ndarray, dims: int = 2
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project vectors onto the top principal components.

    Uses the symmetric eigendecomposition of the mean-centered covariance.
    Component signs follow a fixed convention: the entry with the largest
    magnitude in each component is positive. Returns (coordinates,
    explained-variance ratios, components as rows).
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("expected a 2-D array of row vectors")
    n, d = X.shape
    if n < dims + 1:
        raise DataError(f"PCA needs at least dims+1 = {dims + 1} vectors, got {n}")
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    total = eigvals.sum()
    rank = int((eigvals > max(total, 1.0) * 1e-12).sum())
    if rank < dims:
        warnings.warn(
            f"input rank {rank} below requested dims {dims}; reducing",
            RuntimeWarning,
            stacklevel=2,
        )
        dims = max(rank, 1)
    components = eigvecs[:, :dims].T.copy()
    for i in range(dims):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    coords = Xc @ components.T
    ratios = eigvals[:dims] / total if total > 0 else np.zeros(dims)
    return coords, ratios, components
