"""Cross-validated training of the LSTM regressor and regression metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import lstm, rng as rngmod
from .data import DatasetManifest, FieldRaster
from .errors import ConfigError, DataError, TrainingFailureError, UndefinedStatisticError
from .preprocess import FeatureStats, apply_feature_stats, clean_yield_map, compute_feature_stats

BN_MOMENTUM = 0.1
PREDICT_BATCH = 4096


@dataclass(frozen=True)
class TrainingConfig:
    folds: int = 10
    epochs: int = 12
    batch_size: int = 256
    learning_rate: float = 1e-3
    hidden_size: int = 128
    n_layers: int = 2
    dropout_rate: float = 0.3
    seed: int = 0
    train_folds: tuple[int, ...] | None = None   # subset of folds to fit; None = all
    clean: bool = True
    hard_threshold: float = 15.0

    def __post_init__(self):
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.train_folds is not None:
            object.__setattr__(self, "train_folds", tuple(int(f) for f in self.train_folds))


@dataclass
class PixelDataset:
    """Pixels of several fields stacked into model-ready tensors."""

    values: np.ndarray       # (N, B, T)
    pad_mask: np.ndarray     # (N, B, T)
    yields: np.ndarray       # (N,)
    field_keys: np.ndarray   # (N,) of str
    band_labels: tuple[str, ...]
    pad_value: float

    @property
    def n_pixels(self) -> int:
        return self.values.shape[0]

    def subset(self, keys: Sequence[str]) -> "PixelDataset":
        mask = np.isin(self.field_keys, list(keys))
        return PixelDataset(
            values=self.values[mask],
            pad_mask=self.pad_mask[mask],
            yields=self.yields[mask],
            field_keys=self.field_keys[mask],
            band_labels=self.band_labels,
            pad_value=self.pad_value,
        )


def assemble_pixels(
    manifest: DatasetManifest,
    clean: bool = True,
    hard_threshold: float = 15.0,
    transform: Callable[[FieldRaster], FieldRaster] | None = None,
) -> PixelDataset:
    """Load every raster, optionally clean and transform it, and stack pixels."""
    values, pads, ys, keys = [], [], [], []
    band_labels: tuple[str, ...] | None = None
    pad_value = None
    for entry in manifest.entries:
        raster = manifest.load_raster(entry)
        if clean:
            raster = clean_yield_map(raster, hard_threshold)
        if transform is not None:
            raster = transform(raster)
        if band_labels is None:
            band_labels = raster.band_labels
            pad_value = raster.pad_value
        elif raster.band_labels != band_labels:
            raise DataError(f"field {entry.key()} has inconsistent band labels")
        v, p, y = raster.pixel_matrix()
        values.append(v)
        pads.append(p)
        ys.append(y)
        keys.extend([entry.key()] * v.shape[0])
    if not values:
        raise DataError("manifest contains no fields")
    return PixelDataset(
        values=np.concatenate(values),
        pad_mask=np.concatenate(pads),
        yields=np.concatenate(ys),
        field_keys=np.asarray(keys, dtype=object),
        band_labels=band_labels,
        pad_value=pad_value,
    )


def _metric_triplet(y_true: np.ndarray, y_pred: np.ndarray) -> dict[str, float]:
    n = y_true.size
    if n < 2:
        raise UndefinedStatisticError("metrics need at least 2 points")
    err = y_true - y_pred
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err ** 2).mean()))
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise UndefinedStatisticError("R^2 undefined: zero target variance")
    r2 = 1.0 - float((err ** 2).sum()) / ss_tot
    return {"mae": mae, "rmse": rmse, "r2": r2}


def evaluate(
    y_pred: np.ndarray, y_true: np.ndarray, field_keys: Sequence[str]
) -> dict[str, dict[str, float]]:
    """Subfield metrics over pixels; field metrics over per-field mean pairs."""
    y_pred = np.asarray(y_pred, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    keys = np.asarray(field_keys, dtype=object)
    subfield = _metric_triplet(y_true, y_pred)
    uniq = sorted(set(keys.tolist()))
    f_pred = np.array([y_pred[keys == k].mean() for k in uniq])
    f_true = np.array([y_true[keys == k].mean() for k in uniq])
    return {"subfield": subfield, "field": _metric_triplet(f_true, f_pred)}


def per_field_r2(y_pred: np.ndarray, y_true: np.ndarray, field_keys: Sequence[str]) -> dict[str, float]:
    """Subfield-level R^2 computed separately within each field."""
    keys = np.asarray(field_keys, dtype=object)
    out = {}
    for k in sorted(set(keys.tolist())):
        sel = keys == k
        out[k] = _metric_triplet(y_true[sel], y_pred[sel])["r2"]
    return out


def select_best_fold(fold_metrics: Sequence[Mapping[str, Mapping[str, float]]]) -> int:
    """Index of the fold with the highest field-level R^2 (ties -> lowest index)."""
    if not fold_metrics:
        raise ConfigError("no fold metrics")
    scores = [m["field"]["r2"] for m in fold_metrics]
    return int(np.argmax(scores))


class Adam:
    """Adam optimizer over named tensors."""

    def __init__(self, names: Sequence[str], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0
        self.names = list(names)

    def step(self, tensors: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name in self.names:
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            tensors[name] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def predict_batched(params: lstm.LstmParams, values: np.ndarray,
                    batch: int = PREDICT_BATCH) -> np.ndarray:
    out = np.empty(values.shape[0])
    for lo in range(0, values.shape[0], batch):
        out[lo:lo + batch] = lstm.predict(params, values[lo:lo + batch])
    return out


def train_single(
    train_values: np.ndarray,
    train_yields: np.ndarray,
    config: TrainingConfig,
    fold: int = 0,
) -> tuple[lstm.LstmParams, list[float]]:
    """Fit one model on standardized pixel tensors; returns params and loss history."""
    init_seed = rngmod.stable_hash(config.seed, "init", fold) & 0x7FFFFFFF
    params = lstm.init_params(
        n_bands=train_values.shape[1],
        hidden_size=config.hidden_size,
        n_layers=config.n_layers,
        dropout_rate=config.dropout_rate,
        seed=init_seed,
    )
    opt = Adam(params.trainable_names(), lr=config.learning_rate)
    rng = rngmod.stream(config.seed, "train", fold)
    n = train_values.shape[0]
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, config.batch_size):
            sel = order[lo:lo + config.batch_size]
            loss, grads, mu, var = lstm.loss_and_grads(
                params, train_values[sel], train_yields[sel], dropout_rng=rng
            )
            if not np.isfinite(loss):
                raise TrainingFailureError(epoch)
            opt.step(params.tensors, grads)
            rm = params.tensors["head.running_mean"]
            rv = params.tensors["head.running_var"]
            rm += BN_MOMENTUM * (mu - rm)
            rv += BN_MOMENTUM * (var - rv)
            epoch_loss += loss
            n_batches += 1
        history.append(epoch_loss / max(n_batches, 1))
    return params, history


@dataclass
class FoldResult:
    fold: int
    params: lstm.LstmParams
    stats: FeatureStats
    train_keys: tuple[str, ...]
    val_keys: tuple[str, ...]
    metrics: dict[str, dict[str, float]]
    loss_history: list[float] = field(default_factory=list)


def train_cross_validation(
    dataset: PixelDataset,
    splits: Sequence[tuple[tuple[str, ...], tuple[str, ...]]],
    config: TrainingConfig,
) -> list[FoldResult]:
    """Train/evaluate each requested fold; deterministic for a fixed seed."""
    wanted = set(range(len(splits))) if config.train_folds is None else set(config.train_folds)
    bad = wanted - set(range(len(splits)))
    if bad:
        raise ConfigError(f"train_folds out of range: {sorted(bad)}")
    results = []
    for fold, (train_keys, val_keys) in enumerate(splits):
        if fold not in wanted:
            continue
        train_set = dataset.subset(train_keys)
        val_set = dataset.subset(val_keys)
        if train_set.n_pixels == 0 or val_set.n_pixels == 0:
            raise DataError(f"fold {fold} has an empty train or validation side")
        stats = compute_feature_stats(train_set.values, train_set.pad_mask)
        tv = apply_feature_stats(train_set.values, train_set.pad_mask, stats, dataset.pad_value)
        vv = apply_feature_stats(val_set.values, val_set.pad_mask, stats, dataset.pad_value)
        params, history = train_single(tv, train_set.yields, config, fold=fold)
        preds = predict_batched(params, vv)
        metrics = evaluate(preds, val_set.yields, val_set.field_keys)
        results.append(FoldResult(
            fold=fold,
            params=params,
            stats=stats,
            train_keys=tuple(train_keys),
            val_keys=tuple(val_keys),
            metrics=metrics,
            loss_history=history,
        ))
    return results
