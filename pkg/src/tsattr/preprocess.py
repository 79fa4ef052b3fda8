"""Yield-map cleaning, temporal sampling, vegetation indices and ADS fusion.

All operations are pure: they return new samples/rasters and never mutate
their inputs, so they are safe to apply per pixel in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta
from typing import Mapping, Sequence

import numpy as np

from .data import PAD_VALUE, FieldRaster, TimeSeriesSample
from .errors import (
    BandSchemaError,
    ConfigError,
    CoverageError,
    DataError,
    EmptyFieldError,
    SceneOverflowError,
    ShapeError,
    WindowError,
)

DENOM_EPS = 1e-9
STD_EPS = 1e-9

SOIL_PROPERTIES = ("cec", "cfvo", "nitrogen", "phh2o", "sand", "silt", "soc", "clay")
SOIL_DEPTHS = ("0-5cm", "5-15cm", "15-30cm")
DEFAULT_SOIL_LABELS = tuple(f"{p}_{d}" for p in SOIL_PROPERTIES for d in SOIL_DEPTHS)
DEFAULT_DEM_LABELS = ("dem", "slope", "curvature", "twi", "aspect")
WEATHER_LABELS = ("temp_min", "temp_mean", "temp_max", "precip")

VI_BANDS = (
    "CIG", "CIRE", "GNDVI", "NDVI", "NDYI",
    "RVI", "WDRVI", "NGRDI", "MCARI/OSAVI", "TCARI/OSAVI",
)
_VI_REQUIRED = ("B02", "B03", "B04", "B05", "B06", "B08")


@dataclass(frozen=True)
class SamplingConfig:
    mode: str = "monthly"            # "raw_ts" | "monthly"
    raw_length: int = 150
    monthly_length: int = 24
    pad_value: float = PAD_VALUE

    def __post_init__(self):
        if self.mode not in ("raw_ts", "monthly"):
            raise ConfigError(f"unknown sampling mode {self.mode!r}")
        if self.raw_length < 1 or self.monthly_length < 1:
            raise ConfigError("sequence lengths must be >= 1")

    @property
    def length(self) -> int:
        return self.raw_length if self.mode == "raw_ts" else self.monthly_length


@dataclass(frozen=True)
class AdsFeatures:
    """Static soil/terrain vectors plus daily weather records for one field."""

    static_soil: np.ndarray
    static_dem: np.ndarray
    weather_dates: tuple[date, ...]
    weather_values: np.ndarray                 # (D, 4): tmin, tmean, tmax, precip
    soil_labels: tuple[str, ...] = DEFAULT_SOIL_LABELS
    dem_labels: tuple[str, ...] = DEFAULT_DEM_LABELS

    def __post_init__(self):
        soil = np.asarray(self.static_soil, dtype=np.float64)
        dem = np.asarray(self.static_dem, dtype=np.float64)
        weather = np.asarray(self.weather_values, dtype=np.float64)
        if soil.shape != (len(self.soil_labels),):
            raise ShapeError("static_soil does not match soil_labels")
        if dem.shape != (len(self.dem_labels),):
            raise ShapeError("static_dem does not match dem_labels")
        if not (np.isfinite(soil).all() and np.isfinite(dem).all()):
            raise DataError("static ADS vectors must be finite")
        if weather.shape != (len(self.weather_dates), len(WEATHER_LABELS)):
            raise ShapeError("weather_values must be (n_dates, 4)")
        object.__setattr__(self, "static_soil", soil)
        object.__setattr__(self, "static_dem", dem)
        object.__setattr__(self, "weather_values", weather)
        object.__setattr__(self, "weather_dates", tuple(self.weather_dates))


def clean_yield_map(raster: FieldRaster, hard_threshold: float = 15.0) -> FieldRaster:
    """Three-stage outlier removal: hard threshold, then 3-sigma, then IQR.

    Each stage recomputes its statistics on the survivors of the previous
    one and only ever removes cells.
    """
    yields = raster.yields
    present = raster.presence
    if int(present.sum()) < 4:
        raise DataError("cleaning needs at least 4 yield values")
    keep = present & (yields <= hard_threshold)
    if keep.any():
        vals = yields[keep]
        mean, sd = vals.mean(), vals.std()
        keep = keep & (yields >= mean - 3 * sd) & (yields <= mean + 3 * sd)
    if keep.any():
        q1, q3 = np.percentile(yields[keep], [25, 75])
        iqr = q3 - q1
        keep = keep & (yields >= q1 - 1.5 * iqr) & (yields <= q3 + 1.5 * iqr)
    if not keep.any():
        raise EmptyFieldError(f"cleaning removed every pixel of field {raster.field_id!r}")
    return raster.drop_cells(keep)


def _month_index(d: date, window_start_year: int) -> int:
    return 12 * (d.year - window_start_year) + d.month - 1


def sample_monthly(
    scenes: Sequence[tuple[date, np.ndarray]],
    seeding: date,
    harvesting: date,
    band_labels: Sequence[str],
    config: SamplingConfig | None = None,
) -> TimeSeriesSample:
    """Average scenes per calendar month into a fixed two-year grid.

    The window starts in January of the year before harvest, so the harvest
    month always lands in the second year. NaN entries mark invalid (cloudy)
    observations and are excluded from the monthly mean; months without any
    valid in-season observation are padded.
    """
    config = config or SamplingConfig(mode="monthly")
    T = config.monthly_length
    B = len(band_labels)
    window_start_year = harvesting.year - 1
    if seeding >= harvesting:
        raise WindowError("seeding date must precede harvesting date")
    if seeding < date(window_start_year, 1, 1):
        raise WindowError(
            f"season {seeding}..{harvesting} does not fit the {T}-month window "
            f"starting {window_start_year}-01"
        )
    sums = np.zeros((B, T))
    counts = np.zeros((B, T), dtype=np.int64)
    for scene_date, vec in scenes:
        if not (seeding <= scene_date <= harvesting):
            continue
        idx = _month_index(scene_date, window_start_year)
        if not 0 <= idx < T:
            raise WindowError(f"scene {scene_date} outside the sampling window")
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (B,):
            raise ShapeError(f"scene vector shape {vec.shape}, expected ({B},)")
        valid = np.isfinite(vec)
        sums[valid, idx] += vec[valid]
        counts[valid, idx] += 1
    pad_mask = counts == 0
    values = np.where(pad_mask, config.pad_value, sums / np.maximum(counts, 1))
    return TimeSeriesSample(values=values, pad_mask=pad_mask,
                            band_labels=tuple(band_labels), pad_value=config.pad_value)


def sample_raw(
    scenes: Sequence[tuple[date, np.ndarray]],
    seeding: date,
    harvesting: date,
    band_labels: Sequence[str],
    config: SamplingConfig | None = None,
) -> TimeSeriesSample:
    """Place in-season scenes date-ordered at the trailing time steps."""
    config = config or SamplingConfig(mode="raw_ts")
    T = config.raw_length
    B = len(band_labels)
    in_season = sorted(
        ((d, np.asarray(v, dtype=np.float64)) for d, v in scenes if seeding <= d <= harvesting),
        key=lambda pair: pair[0],
    )
    if len(in_season) > T:
        raise SceneOverflowError(
            f"{len(in_season)} scenes exceed the raw sequence length {T}"
        )
    values = np.full((B, T), config.pad_value)
    pad_mask = np.ones((B, T), dtype=bool)
    offset = T - len(in_season)
    for slot, (_, vec) in enumerate(in_season):
        if vec.shape != (B,):
            raise ShapeError(f"scene vector shape {vec.shape}, expected ({B},)")
        valid = np.isfinite(vec)
        col = offset + slot
        values[valid, col] = vec[valid]
        pad_mask[valid, col] = False
    return TimeSeriesSample(values=values, pad_mask=pad_mask,
                            band_labels=tuple(band_labels), pad_value=config.pad_value)


def _osavi(b, guard):
    RE1, RE2 = b["B05"], b["B06"]
    return 1.16 * (RE2 - RE1) / guard(RE2 + RE1 + 0.16)


# One callable per index; ``guard`` substitutes near-zero denominators and
# records where it fired.
_VI_FORMULAS = {
    "CIG": lambda b, guard: b["B08"] / guard(b["B03"]) - 1.0,
    "CIRE": lambda b, guard: b["B08"] / guard(b["B05"]) - 1.0,
    "GNDVI": lambda b, guard: (b["B08"] - b["B03"]) / guard(b["B08"] + b["B03"]),
    "NDVI": lambda b, guard: (b["B08"] - b["B04"]) / guard(b["B08"] + b["B04"]),
    "NDYI": lambda b, guard: (b["B03"] - b["B02"]) / guard(b["B03"] + b["B02"]),
    "RVI": lambda b, guard: b["B06"] / guard(b["B04"]),
    "WDRVI": lambda b, guard: (0.1 * b["B08"] - b["B04"]) / guard(0.1 * b["B08"] + b["B04"]),
    "NGRDI": lambda b, guard: (b["B03"] - b["B04"]) / guard(b["B03"] + b["B04"]),
    "MCARI/OSAVI": lambda b, guard: (
        ((b["B06"] - b["B05"]) - 0.2 * (b["B06"] - b["B03"])) * (b["B06"] / guard(b["B05"]))
    ) / guard(_osavi(b, guard)),
    "TCARI/OSAVI": lambda b, guard: (
        3.0 * ((b["B06"] - b["B05"]) - 0.2 * (b["B06"] - b["B03"]) * (b["B06"] / guard(b["B05"])))
    ) / guard(_osavi(b, guard)),
}


def compute_vegetation_indices(
    sample: TimeSeriesSample, eps: float = DENOM_EPS
) -> tuple[TimeSeriesSample, np.ndarray]:
    """Replace the 12 satellite bands by the 10 vegetation indices.

    A step's index is computed only where every required band is non-padded;
    denominators below ``eps`` in magnitude yield a padded, flagged output.
    Returns the index sample and the (10, T) guard-hit flags.
    """
    missing = [name for name in _VI_REQUIRED if name not in sample.band_labels]
    if missing:
        raise BandSchemaError(f"missing required bands: {missing}")
    idx = {name: sample.band_labels.index(name) for name in _VI_REQUIRED}
    T = sample.n_steps
    inputs_masked = np.zeros(T, dtype=bool)
    for name in _VI_REQUIRED:
        inputs_masked |= sample.pad_mask[idx[name]]

    guard_hits = np.zeros((len(VI_BANDS), T), dtype=bool)
    guard_log: list[np.ndarray] = []

    def guard(denom: np.ndarray) -> np.ndarray:
        bad = np.abs(denom) < eps
        guard_log.append(bad)
        return np.where(bad, 1.0, denom)

    bands = {name: sample.values[idx[name]] for name in _VI_REQUIRED}
    values = np.full((len(VI_BANDS), T), sample.pad_value)
    pad_mask = np.ones((len(VI_BANDS), T), dtype=bool)
    with np.errstate(all="ignore"):
        for row, name in enumerate(VI_BANDS):
            guard_log.clear()
            formula = _VI_FORMULAS[name](bands, guard)
            fired = np.zeros(T, dtype=bool)
            for bad in guard_log:
                fired |= bad
            ok = ~inputs_masked & ~fired
            values[row, ok] = formula[ok]
            pad_mask[row] = ~ok
            guard_hits[row] = fired & ~inputs_masked
    out = TimeSeriesSample(values=values, pad_mask=pad_mask,
                           band_labels=VI_BANDS, pad_value=sample.pad_value)
    return out, guard_hits


def _season_months(seeding: date, harvesting: date, window_start_year: int, T: int) -> np.ndarray:
    """Boolean mask of months overlapping [seeding, harvesting]."""
    in_season = np.zeros(T, dtype=bool)
    lo = _month_index(seeding, window_start_year)
    hi = _month_index(harvesting, window_start_year)
    if lo < 0 or hi >= T:
        raise WindowError("season does not fit the monthly window")
    in_season[lo:hi + 1] = True
    return in_season


def fuse_ads(
    sample: TimeSeriesSample,
    ads: AdsFeatures,
    seeding: date,
    harvesting: date,
) -> TimeSeriesSample:
    """Stack soil/terrain/weather rows under a monthly satellite sample.

    Static features repeat at every in-season month; weather features hold
    the monthly sum of the daily values. All ADS rows are padded outside
    [seeding, harvesting]. Satellite labels gain the ``s2:`` prefix.
    """
    T = sample.n_steps
    window_start_year = harvesting.year - 1
    in_season = _season_months(seeding, harvesting, window_start_year, T)

    weather_by_date = dict(zip(ads.weather_dates, ads.weather_values))
    day = seeding
    sums = np.zeros((len(WEATHER_LABELS), T))
    while day <= harvesting:
        if day not in weather_by_date:
            raise CoverageError(f"weather record missing for {day}")
        sums[:, _month_index(day, window_start_year)] += weather_by_date[day]
        day += timedelta(days=1)

    pad = sample.pad_value
    rows = [sample.values]
    masks = [sample.pad_mask]
    labels = [f"s2:{name}" for name in sample.band_labels]
    for vec, names, prefix in (
        (ads.static_soil, ads.soil_labels, "soil"),
        (ads.static_dem, ads.dem_labels, "dem"),
    ):
        block = np.where(in_season, vec[:, None], pad)
        rows.append(block)
        masks.append(np.broadcast_to(~in_season, block.shape))
        labels.extend(f"{prefix}:{name}" for name in names)
    weather_block = np.where(in_season, sums, pad)
    rows.append(weather_block)
    masks.append(np.broadcast_to(~in_season, weather_block.shape))
    labels.extend(f"weather:{name}" for name in WEATHER_LABELS)
    return TimeSeriesSample(
        values=np.vstack(rows),
        pad_mask=np.vstack(masks),
        band_labels=tuple(labels),
        pad_value=pad,
    )


def raster_vegetation_indices(raster: FieldRaster, eps: float = DENOM_EPS) -> FieldRaster:
    """Apply the vegetation-index transform to every present cell of a raster."""
    H, W = raster.grid_shape
    T = raster.n_steps
    values = np.full((H, W, len(VI_BANDS), T), raster.pad_value)
    pad = np.ones((H, W, len(VI_BANDS), T), dtype=bool)
    for r, c in raster.pixel_coords():
        sample = raster.sample_at(r, c)
        out, _ = compute_vegetation_indices(sample, eps)
        values[r, c] = out.values
        pad[r, c] = out.pad_mask
    return raster.with_samples(values, pad, VI_BANDS)


@dataclass(frozen=True)
class FeatureStats:
    """Per-band standardization statistics fitted on training pixels."""

    mean: np.ndarray
    std: np.ndarray
    flagged: np.ndarray      # bands left unscaled (no data or ~zero variance)

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "flagged": self.flagged.tolist()}

    @classmethod
    def from_json(cls, payload: Mapping) -> "FeatureStats":
        return cls(
            mean=np.asarray(payload["mean"], dtype=np.float64),
            std=np.asarray(payload["std"], dtype=np.float64),
            flagged=np.asarray(payload["flagged"], dtype=bool),
        )


def compute_feature_stats(values: np.ndarray, pad_mask: np.ndarray) -> FeatureStats:
    """Mean/std per band over non-padded entries of (N, B, T) training tensors."""
    B = values.shape[1]
    mean = np.zeros(B)
    std = np.ones(B)
    flagged = np.zeros(B, dtype=bool)
    for b in range(B):
        vals = values[:, b][~pad_mask[:, b]]
        if vals.size == 0:
            flagged[b] = True
            continue
        mean_b, std_b = vals.mean(), vals.std()
        if std_b < STD_EPS:
            flagged[b] = True
            mean[b] = 0.0
            std[b] = 1.0
        else:
            mean[b] = mean_b
            std[b] = std_b
    return FeatureStats(mean=mean, std=std, flagged=flagged)


def apply_feature_stats(
    values: np.ndarray, pad_mask: np.ndarray, stats: FeatureStats, pad_value: float = PAD_VALUE
) -> np.ndarray:
    """Z-score non-padded entries; padded entries stay bit-identical."""
    scaled = (values - stats.mean[None, :, None]) / stats.std[None, :, None]
    return np.where(pad_mask, values, np.where(np.broadcast_to(
        stats.flagged[None, :, None], values.shape), values, scaled))


def standardize_features(
    train: Sequence[TimeSeriesSample], apply_to: Sequence[TimeSeriesSample]
) -> tuple[list[TimeSeriesSample], FeatureStats]:
    """Fit per-band statistics on ``train`` and standardize ``apply_to``."""
    if not train:
        raise DataError("no training samples to fit statistics on")
    tv = np.stack([s.values for s in train])
    tm = np.stack([s.pad_mask for s in train])
    stats = compute_feature_stats(tv, tm)
    out = []
    for s in apply_to:
        values = apply_feature_stats(s.values[None], s.pad_mask[None], stats, s.pad_value)[0]
        out.append(TimeSeriesSample(values=values, pad_mask=s.pad_mask,
                                    band_labels=s.band_labels, pad_value=s.pad_value))
    return out, stats
