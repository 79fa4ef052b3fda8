"""Domain types, raster and manifest I/O, synthetic datasets and CV splitting.

A dataset is a JSON manifest referencing one ``.tsr`` raster container per
(field, season). Rasters hold per-pixel band/time matrices plus the target
yield map; absent cells (clouds, cleaning) carry no payload at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from . import rng as rngmod
from .containers import read_container, write_container
from .errors import (
    ConfigError,
    DanglingReferenceError,
    DataError,
    FormatError,
    InfeasibleSplitError,
    ShapeError,
)

PAD_VALUE = -1.0

S2_BANDS = (
    "B01", "B02", "B03", "B04", "B05", "B06",
    "B07", "B08", "B8A", "B09", "B11", "B12",
)

CROPS = ("soybean", "wheat", "rapeseed", "synthetic")

# Stage vocabulary per crop; the synthetic crop reuses the soybean scale.
GROWTH_STAGE_NAMES: dict[str, tuple[str, ...]] = {
    "rapeseed": (
        "Bud development", "Leaf development", "Shoot development", "Heading",
        "Flowering", "Development of fruit", "Ripening", "Senescence",
    ),
    "wheat": (
        "Bud development", "Leaf development", "Tillering", "Shoot development",
        "Bolting", "Heading", "Flowering", "Development of fruit", "Ripening",
        "Senescence",
    ),
    "soybean": (
        "Emergence", "Unifoliolate", "1st-25th Trifoliolate", "Beginning Bloom",
        "Full Bloom", "Beginning Pod", "Full Pod", "Beginning Seed", "Full Seed",
        "Beginning Maturity", "Full Maturity",
    ),
}
GROWTH_STAGE_NAMES["synthetic"] = GROWTH_STAGE_NAMES["soybean"]

TSR_MAGIC = b"TSR1"
GT_MAGIC = b"TGT1"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TimeSeriesSample:
    """One pixel's bands-by-steps feature matrix with its padding mask."""

    values: np.ndarray        # (B, T) float64
    pad_mask: np.ndarray      # (B, T) bool, True where padded
    band_labels: tuple[str, ...]
    pad_value: float = PAD_VALUE

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        pad_mask = np.ascontiguousarray(self.pad_mask, dtype=bool)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError(f"sample values must be (B,T) with B,T >= 1, got {values.shape}")
        if pad_mask.shape != values.shape:
            raise ShapeError(f"pad_mask shape {pad_mask.shape} != values shape {values.shape}")
        labels = tuple(self.band_labels)
        if len(labels) != values.shape[0]:
            raise ShapeError(f"{len(labels)} band labels for {values.shape[0]} bands")
        if pad_mask.any() and not np.all(values[pad_mask] == self.pad_value):
            raise DataError("padded entries must hold exactly the pad value")
        if not np.isfinite(values[~pad_mask]).all():
            raise DataError("non-padded values must be finite")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "pad_mask", _freeze(pad_mask))
        object.__setattr__(self, "band_labels", labels)
        object.__setattr__(self, "pad_value", float(self.pad_value))

    @property
    def n_bands(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    def padded_steps(self) -> np.ndarray:
        """Indices of time steps padded across all bands."""
        return np.nonzero(self.pad_mask.all(axis=0))[0]


@dataclass(frozen=True)
class GrowthStageSchedule:
    """Ordered growth stages with the time-step set each one covers."""

    crop: str
    stages: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        if self.crop not in GROWTH_STAGE_NAMES:
            raise DataError(f"unknown crop {self.crop!r}")
        vocab = GROWTH_STAGE_NAMES[self.crop]
        stages = tuple((str(name), tuple(int(t) for t in steps)) for name, steps in self.stages)
        seen: set[int] = set()
        for name, steps in stages:
            if name not in vocab:
                raise DataError(f"stage {name!r} not in the {self.crop} vocabulary")
            overlap = seen.intersection(steps)
            if overlap:
                raise DataError(f"time steps {sorted(overlap)} claimed by two stages")
            if any(t < 0 for t in steps):
                raise DataError("stage time steps must be non-negative")
            seen.update(steps)
        object.__setattr__(self, "stages", stages)

    @property
    def stage_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.stages)

    def covered_steps(self) -> frozenset[int]:
        return frozenset(t for _, steps in self.stages for t in steps)

    def to_json(self) -> list:
        return [[name, list(steps)] for name, steps in self.stages]

    @classmethod
    def from_json(cls, crop: str, payload: Iterable) -> "GrowthStageSchedule":
        return cls(crop=crop, stages=tuple((p[0], tuple(p[1])) for p in payload))


@dataclass(frozen=True)
class FieldRaster:
    """Georeferenced grid of pixel samples plus the target yield map.

    Absent cells are canonical: presence False, yield NaN, values at
    pad_value, mask all True. A cell has a sample iff it has a yield.
    """

    field_id: str
    farm_id: str
    crop: str
    season: str
    seeding_date: date
    harvesting_date: date
    band_labels: tuple[str, ...]
    values: np.ndarray       # (H, W, B, T) float64
    pad_mask: np.ndarray     # (H, W, B, T) bool
    presence: np.ndarray     # (H, W) bool
    yields: np.ndarray       # (H, W) float64, NaN where absent
    cell_size_m: float = 10.0
    pad_value: float = PAD_VALUE

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        pad_mask = np.ascontiguousarray(self.pad_mask, dtype=bool)
        presence = np.ascontiguousarray(self.presence, dtype=bool)
        yields = np.array(self.yields, dtype=np.float64)
        if values.ndim != 4:
            raise ShapeError(f"raster values must be (H,W,B,T), got {values.shape}")
        H, W, B, T = values.shape
        if pad_mask.shape != values.shape or presence.shape != (H, W) or yields.shape != (H, W):
            raise ShapeError("raster array shapes are inconsistent")
        labels = tuple(self.band_labels)
        if len(labels) != B:
            raise ShapeError(f"{len(labels)} band labels for {B} bands")
        if self.crop not in CROPS:
            raise DataError(f"unknown crop {self.crop!r}")
        if self.seeding_date >= self.harvesting_date:
            raise DataError("seeding date must precede harvesting date")
        present_yields = yields[presence]
        if present_yields.size and (not np.isfinite(present_yields).all() or (present_yields < 0).any()):
            raise DataError("present yields must be finite and non-negative")
        if np.isfinite(yields[~presence]).any():
            raise DataError("absent cells must not carry yield values")
        # Canonicalize absent cells so serialization and equality are stable.
        values = values.copy()
        pad_mask = pad_mask.copy()
        yields = yields.copy()
        values[~presence] = self.pad_value
        pad_mask[~presence] = True
        yields[~presence] = np.nan
        pv = values[presence]
        pm = pad_mask[presence]
        if pm.any() and not np.all(pv[pm] == self.pad_value):
            raise DataError("padded entries must hold exactly the pad value")
        if not np.isfinite(pv[~pm]).all():
            raise DataError("non-padded values must be finite")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "pad_mask", _freeze(pad_mask))
        object.__setattr__(self, "presence", _freeze(presence))
        object.__setattr__(self, "yields", _freeze(yields))
        object.__setattr__(self, "band_labels", labels)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @property
    def n_bands(self) -> int:
        return self.values.shape[2]

    @property
    def n_steps(self) -> int:
        return self.values.shape[3]

    @property
    def n_pixels(self) -> int:
        return int(self.presence.sum())

    def key(self) -> str:
        return f"{self.field_id}:{self.season}"

    def sample_at(self, row: int, col: int) -> TimeSeriesSample | None:
        if not self.presence[row, col]:
            return None
        return TimeSeriesSample(
            values=self.values[row, col],
            pad_mask=self.pad_mask[row, col],
            band_labels=self.band_labels,
            pad_value=self.pad_value,
        )

    def pixel_coords(self) -> np.ndarray:
        """(N, 2) row/col pairs of present cells, row-major order."""
        return np.argwhere(self.presence)

    def pixel_matrix(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Present-cell tensors: values (N,B,T), pad mask (N,B,T), yields (N,)."""
        return (
            self.values[self.presence],
            self.pad_mask[self.presence],
            self.yields[self.presence],
        )

    def drop_cells(self, keep: np.ndarray) -> "FieldRaster":
        """New raster keeping only present cells where ``keep`` is True."""
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != self.grid_shape:
            raise ShapeError("keep mask must match the grid shape")
        presence = self.presence & keep
        yields = np.where(presence, self.yields, np.nan)
        return FieldRaster(
            field_id=self.field_id,
            farm_id=self.farm_id,
            crop=self.crop,
            season=self.season,
            seeding_date=self.seeding_date,
            harvesting_date=self.harvesting_date,
            band_labels=self.band_labels,
            values=self.values,
            pad_mask=self.pad_mask,
            presence=presence,
            yields=yields,
            cell_size_m=self.cell_size_m,
            pad_value=self.pad_value,
        )

    def with_samples(self, values: np.ndarray, pad_mask: np.ndarray,
                     band_labels: Sequence[str]) -> "FieldRaster":
        """New raster with replaced per-cell feature planes (same grid/yields)."""
        return FieldRaster(
            field_id=self.field_id,
            farm_id=self.farm_id,
            crop=self.crop,
            season=self.season,
            seeding_date=self.seeding_date,
            harvesting_date=self.harvesting_date,
            band_labels=tuple(band_labels),
            values=values,
            pad_mask=pad_mask,
            presence=self.presence,
            yields=self.yields,
            cell_size_m=self.cell_size_m,
            pad_value=self.pad_value,
        )


def write_field_raster(raster: FieldRaster, path: str | Path) -> None:
    """Serialize to the ``.tsr`` container (bit-exact round trip)."""
    values, pad_mask, yields = raster.pixel_matrix()
    meta = {
        "field_id": raster.field_id,
        "farm_id": raster.farm_id,
        "crop": raster.crop,
        "season": raster.season,
        "seeding_date": raster.seeding_date.isoformat(),
        "harvesting_date": raster.harvesting_date.isoformat(),
        "cell_size_m": raster.cell_size_m,
        "band_labels": list(raster.band_labels),
        "pad_value": raster.pad_value,
        "grid": list(raster.grid_shape),
    }
    write_container(path, TSR_MAGIC, meta, {
        "presence": raster.presence,
        "yield": yields,
        "values": values,
        "pad_mask": pad_mask,
    })


def load_field_raster(path: str | Path) -> FieldRaster:
    meta, arrays = read_container(path, TSR_MAGIC)
    try:
        H, W = (int(v) for v in meta["grid"])
        presence = arrays["presence"]
        flat_yield = arrays["yield"]
        flat_values = arrays["values"]
        flat_pad = arrays["pad_mask"]
        labels = tuple(meta["band_labels"])
        pad_value = float(meta["pad_value"])
        seeding = date.fromisoformat(meta["seeding_date"])
        harvesting = date.fromisoformat(meta["harvesting_date"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad raster header: {exc}") from exc
    if presence.shape != (H, W):
        raise FormatError(f"{path}: presence bitmap does not match grid {H}x{W}")
    n = int(presence.sum())
    if flat_values.shape[0] != n or flat_yield.shape[0] != n:
        raise FormatError(f"{path}: payload rows do not match presence count")
    if flat_values.ndim != 3:
        raise FormatError(f"{path}: values payload must be (N,B,T)")
    B, T = flat_values.shape[1], flat_values.shape[2]
    values = np.full((H, W, B, T), pad_value, dtype=np.float64)
    pad_mask = np.ones((H, W, B, T), dtype=bool)
    yields = np.full((H, W), np.nan)
    values[presence] = flat_values
    pad_mask[presence] = flat_pad
    yields[presence] = flat_yield
    return FieldRaster(
        field_id=str(meta["field_id"]),
        farm_id=str(meta["farm_id"]),
        crop=str(meta["crop"]),
        season=str(meta["season"]),
        seeding_date=seeding,
        harvesting_date=harvesting,
        band_labels=labels,
        values=values,
        pad_mask=pad_mask,
        presence=presence,
        yields=yields,
        cell_size_m=float(meta["cell_size_m"]),
        pad_value=pad_value,
    )


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    field_id: str
    farm_id: str
    season: str
    seeding_date: date
    harvesting_date: date

    def key(self) -> str:
        return f"{self.field_id}:{self.season}"


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    crop: str
    entries: tuple[ManifestEntry, ...]
    growth_stage_schedules: Mapping[str, GrowthStageSchedule] = field(default_factory=dict)
    root: Path = Path(".")

    def __post_init__(self):
        if self.crop not in CROPS:
            raise DataError(f"unknown crop {self.crop!r}")
        keys = [e.key() for e in self.entries]
        dupes = {k for k in keys if keys.count(k) > 1}
        if dupes:
            raise DataError(f"duplicate (field, season) entries: {sorted(dupes)}")
        unknown = set(self.growth_stage_schedules) - set(keys)
        if unknown:
            raise DataError(f"growth-stage schedules for unknown fields: {sorted(unknown)}")
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "growth_stage_schedules", dict(self.growth_stage_schedules))
        object.__setattr__(self, "root", Path(self.root))

    def keys(self) -> list[str]:
        return [e.key() for e in self.entries]

    def entry(self, key: str) -> ManifestEntry:
        for e in self.entries:
            if e.key() == key:
                return e
        raise DataError(f"no manifest entry {key!r}")

    def raster_path(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def load_raster(self, entry: ManifestEntry | str) -> FieldRaster:
        if isinstance(entry, str):
            entry = self.entry(entry)
        return load_field_raster(self.raster_path(entry))

    def schedule_for(self, key: str) -> GrowthStageSchedule | None:
        return self.growth_stage_schedules.get(key)

    def farms(self) -> list[str]:
        return sorted({e.farm_id for e in self.entries})


def _manifest_payload(manifest: DatasetManifest) -> dict:
    return {
        "name": manifest.name,
        "crop": manifest.crop,
        "fields": [
            {
                "path": e.path,
                "field_id": e.field_id,
                "farm_id": e.farm_id,
                "season": e.season,
                "seeding_date": e.seeding_date.isoformat(),
                "harvesting_date": e.harvesting_date.isoformat(),
            }
            for e in manifest.entries
        ],
        "growth_stages": {
            key: {"crop": sched.crop, "stages": sched.to_json()}
            for key, sched in sorted(manifest.growth_stage_schedules.items())
        },
    }


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    payload = _manifest_payload(manifest)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest; raster files are checked for existence only."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"{path}: cannot read manifest: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: manifest is not valid JSON: {exc.msg}") from exc

    def _require(obj: dict, key: str, ctx: str):
        if key not in obj:
            raise FormatError(f"{path}: missing key {key!r} in {ctx}")
        return obj[key]

    entries = []
    for i, item in enumerate(_require(payload, "fields", "manifest")):
        ctx = f"fields[{i}]"
        try:
            entries.append(ManifestEntry(
                path=str(_require(item, "path", ctx)),
                field_id=str(_require(item, "field_id", ctx)),
                farm_id=str(_require(item, "farm_id", ctx)),
                season=str(_require(item, "season", ctx)),
                seeding_date=date.fromisoformat(_require(item, "seeding_date", ctx)),
                harvesting_date=date.fromisoformat(_require(item, "harvesting_date", ctx)),
            ))
        except ValueError as exc:
            raise FormatError(f"{path}: {ctx}: bad date: {exc}") from exc
    schedules = {}
    for key, item in _require(payload, "growth_stages", "manifest").items():
        try:
            schedules[key] = GrowthStageSchedule.from_json(
                crop=str(_require(item, "crop", f"growth_stages[{key}]")),
                payload=_require(item, "stages", f"growth_stages[{key}]"),
            )
        except (TypeError, IndexError) as exc:
            raise FormatError(f"{path}: growth_stages[{key}]: malformed stages: {exc}") from exc
    manifest = DatasetManifest(
        name=str(_require(payload, "name", "manifest")),
        crop=str(_require(payload, "crop", "manifest")),
        entries=tuple(entries),
        growth_stage_schedules=schedules,
        root=path.parent,
    )
    for e in manifest.entries:
        if not manifest.raster_path(e).is_file():
            raise DanglingReferenceError(
                f"field {e.field_id!r} references missing raster file {e.path!r}"
            )
    return manifest


# ---------------------------------------------------------------------------
# Synthetic datasets
# ---------------------------------------------------------------------------

GENERATORS = ("linear", "additive_nonlinear", "lstm_teacher")


@dataclass(frozen=True)
class SyntheticSpec:
    n_farms: int
    fields_per_farm: int
    grid_size: int
    n_bands: int
    n_steps: int
    generator: str = "linear"
    noise_sigma: float = 0.0
    spatial_smoothness: float = 2.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_farms", "fields_per_farm", "grid_size", "n_bands", "n_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.spatial_smoothness < 0:
            raise ConfigError("spatial_smoothness must be >= 0")


@dataclass(frozen=True)
class SyntheticGroundTruth:
    """Closed-form attribution ground truth recorded next to a synthetic dataset."""

    generator: str
    core_steps: tuple[int, ...]
    weights: np.ndarray | None = None        # linear: (B, T)
    alpha: np.ndarray | None = None          # additive: (B, T) linear term
    beta: np.ndarray | None = None           # additive: (B, T) quadratic term
    teacher_meta: dict | None = None         # lstm_teacher: affine rescaling + checkpoint


def save_ground_truth(gt: SyntheticGroundTruth, path: str | Path) -> None:
    arrays = {}
    for name in ("weights", "alpha", "beta"):
        arr = getattr(gt, name)
        if arr is not None:
            arrays[name] = arr
    meta = {
        "generator": gt.generator,
        "core_steps": list(gt.core_steps),
        "teacher_meta": gt.teacher_meta,
    }
    write_container(path, GT_MAGIC, meta, arrays)


def load_ground_truth(path: str | Path) -> SyntheticGroundTruth:
    meta, arrays = read_container(path, GT_MAGIC)
    return SyntheticGroundTruth(
        generator=meta["generator"],
        core_steps=tuple(int(t) for t in meta["core_steps"]),
        weights=arrays.get("weights"),
        alpha=arrays.get("alpha"),
        beta=arrays.get("beta"),
        teacher_meta=meta.get("teacher_meta"),
    )


def _smooth_field(shape: tuple[int, int], smoothness: float, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean unit-sd random surface; smoothness is the blur sigma in cells."""
    z = rng.standard_normal(shape)
    if smoothness > 0:
        z = ndimage.gaussian_filter(z, sigma=smoothness, mode="reflect")
    sd = z.std()
    if sd > 0:
        z = (z - z.mean()) / sd
    return z


def _season_window(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[int, int]:
    """In-season [start, end] step indices; always bracket the core third."""
    T = spec.n_steps
    if T < 6:
        return 0, T - 1
    start = int(rng.integers(max(1, T // 6), T // 3 + 1))
    end = int(rng.integers((2 * T) // 3, T - 1))
    return start, end


def _step_dates(spec: SyntheticSpec, start: int, end: int) -> tuple[date, date, str]:
    if spec.n_steps == 24:
        # Monthly convention: two calendar years, harvest in the second one.
        base_year = 2020
        seeding = date(base_year + start // 12, start % 12 + 1, 15)
        harvesting = date(base_year + end // 12, end % 12 + 1, 15)
        season = str(harvesting.year)
    else:
        step_days = max(1, 730 // spec.n_steps)
        origin = date(2020, 1, 1)
        seeding = origin + timedelta(days=start * step_days)
        harvesting = origin + timedelta(days=end * step_days + 1)
        season = str(harvesting.year)
    return seeding, harvesting, season


def _default_schedule(crop: str, start: int, end: int) -> GrowthStageSchedule:
    # Every stage of the crop's vocabulary appears; short seasons leave the
    # late stages with empty step sets rather than dropping them.
    vocab = GROWTH_STAGE_NAMES[crop]
    chunks = np.array_split(np.arange(start, end + 1), len(vocab))
    return GrowthStageSchedule(
        crop=crop,
        stages=tuple((vocab[i], tuple(int(t) for t in chunk)) for i, chunk in enumerate(chunks)),
    )


def generate_synthetic_dataset(
    spec: SyntheticSpec, out_dir: str | Path, name: str = "synthetic"
) -> tuple[DatasetManifest, SyntheticGroundTruth]:
    """Write a full synthetic dataset and return its manifest and ground truth.

    Yields are produced from the feature tensors by the chosen generator; for
    ``linear`` they are exactly ``sum(w * x)`` plus optional gaussian noise,
    with signal confined to a core window common to every field's season.
    Deterministic for a fixed spec (byte-identical files on rerun).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    B, T, H = spec.n_bands, spec.n_steps, spec.grid_size
    labels = S2_BANDS if B == 12 else tuple(f"b{i:02d}" for i in range(B))

    field_specs = []
    for farm_i in range(spec.n_farms):
        for field_i in range(spec.fields_per_farm):
            farm_id = f"farm{farm_i:02d}"
            field_id = f"f{farm_i:02d}_{field_i:02d}"
            wrng = rngmod.stream(spec.seed, "window", field_id)
            start, end = _season_window(spec, wrng)
            field_specs.append((farm_id, field_id, start, end))
    core_lo = max(s for _, _, s, _ in field_specs)
    core_hi = min(e for _, _, _, e in field_specs)
    if core_lo > core_hi:  # only possible for tiny T; collapse to a shared window
        start0, end0 = field_specs[0][2], field_specs[0][3]
        field_specs = [(fa, fi, start0, end0) for fa, fi, _, _ in field_specs]
        core_lo, core_hi = start0, end0
    core_steps = tuple(range(core_lo, core_hi + 1))

    grng = rngmod.stream(spec.seed, "generator")
    target_mean, infield_sd = 4.0, 0.8
    weights = alpha = beta = None
    teacher = None
    teacher_meta = None
    if spec.generator == "linear":
        weights = np.zeros((B, T))
        w_core = grng.uniform(0.2, 1.0, size=(B, len(core_steps)))
        w_core *= target_mean / (0.5 * w_core.sum())
        weights[:, core_lo:core_hi + 1] = w_core
        amp = grng.uniform(0.5, 1.5, size=(B, len(core_steps)))
        amp *= infield_sd / float((w_core * amp).sum())
    elif spec.generator == "additive_nonlinear":
        alpha = np.zeros((B, T))
        beta = np.zeros((B, T))
        a_core = grng.uniform(0.2, 1.0, size=(B, len(core_steps)))
        b_core = grng.uniform(-0.3, 0.3, size=(B, len(core_steps)))
        expected = (a_core * 0.5 + b_core * 0.25).sum()
        scale = target_mean / expected
        alpha[:, core_lo:core_hi + 1] = a_core * scale
        beta[:, core_lo:core_hi + 1] = b_core * scale
        amp = grng.uniform(0.5, 1.5, size=(B, len(core_steps)))
        amp *= infield_sd / float((np.abs(a_core * scale) * amp).sum())
    else:  # lstm_teacher
        from .lstm import LstmRegressor, init_params

        params = init_params(n_bands=B, hidden_size=16, n_layers=2,
                             seed=rngmod.stable_hash(spec.seed, "teacher") & 0x7FFFFFFF)
        teacher = LstmRegressor(params)
        amp = grng.uniform(0.5, 1.5, size=(B, len(core_steps)))
        amp *= 1.0 / amp.mean()

    entries = []
    schedules = {}
    rasters = []
    for farm_id, field_id, start, end in field_specs:
        frng = rngmod.stream(spec.seed, "field", field_id)
        z = _smooth_field((H, H), spec.spatial_smoothness, frng)
        base = frng.uniform(0.3, 0.7, size=(B, T))
        jitter = 0.02 * frng.standard_normal(size=(H, H, B, T))
        season_cols = np.zeros(T, dtype=bool)
        season_cols[start:end + 1] = True

        x = np.clip(base[None, None] + jitter, 0.02, 1.1)
        amp_full = np.zeros((B, T))
        amp_full[:, core_lo:core_hi + 1] = amp
        x = np.clip(x + z[:, :, None, None] * amp_full[None, None], 0.02, 1.5)
        pad = np.broadcast_to(~season_cols, (H, H, B, T)).copy()
        x = np.where(pad, PAD_VALUE, x)

        if spec.generator == "linear":
            y = np.einsum("hwbt,bt->hw", x, weights)
        elif spec.generator == "additive_nonlinear":
            y = np.einsum("hwbt,bt->hw", x, alpha) + np.einsum("hwbt,bt->hw", x * x, beta)
        else:
            flat = x.reshape(H * H, B, T)
            raw = teacher.predict(flat).reshape(H, H)
        if spec.generator == "lstm_teacher":
            rasters.append((farm_id, field_id, start, end, x, raw))
        else:
            noise = rngmod.stream(spec.seed, "noise", field_id).standard_normal((H, H))
            y = np.maximum(y + spec.noise_sigma * noise, 0.0)
            rasters.append((farm_id, field_id, start, end, x, y))

    if spec.generator == "lstm_teacher":
        # Affine-rescale teacher outputs dataset-wide to a plausible yield range.
        raw_all = np.concatenate([r[5].ravel() for r in rasters])
        sd = raw_all.std()
        gain = infield_sd / sd if sd > 0 else 1.0
        offset = target_mean - gain * raw_all.mean()
        teacher_meta = {"gain": gain, "offset": offset, "hidden_size": 16, "n_layers": 2}
        rescaled = []
        for farm_id, field_id, start, end, x, raw in rasters:
            noise = rngmod.stream(spec.seed, "noise", field_id).standard_normal(raw.shape)
            y = np.maximum(gain * raw + offset + spec.noise_sigma * noise, 0.0)
            rescaled.append((farm_id, field_id, start, end, x, y))
        rasters = rescaled

    for farm_id, field_id, start, end, x, y in rasters:
        seeding, harvesting, season = _step_dates(spec, start, end)
        season_cols = np.zeros(T, dtype=bool)
        season_cols[start:end + 1] = True
        pad = np.broadcast_to(~season_cols, (H, H, B, T)).copy()
        raster = FieldRaster(
            field_id=field_id,
            farm_id=farm_id,
            crop="synthetic",
            season=season,
            seeding_date=seeding,
            harvesting_date=harvesting,
            band_labels=labels,
            values=x,
            pad_mask=pad,
            presence=np.ones((H, H), dtype=bool),
            yields=y,
        )
        fname = f"{field_id}_{season}.tsr"
        write_field_raster(raster, out_dir / fname)
        entries.append(ManifestEntry(
            path=fname,
            field_id=field_id,
            farm_id=farm_id,
            season=season,
            seeding_date=seeding,
            harvesting_date=harvesting,
        ))
        schedules[f"{field_id}:{season}"] = _default_schedule("synthetic", start, end)

    manifest = DatasetManifest(
        name=name,
        crop="synthetic",
        entries=tuple(entries),
        growth_stage_schedules=schedules,
        root=out_dir,
    )
    save_manifest(manifest, out_dir / "manifest.json")
    gt = SyntheticGroundTruth(
        generator=spec.generator,
        core_steps=core_steps,
        weights=weights,
        alpha=alpha,
        beta=beta,
        teacher_meta=teacher_meta,
    )
    save_ground_truth(gt, out_dir / "ground_truth.tgt")
    if teacher is not None:
        from .lstm import save_checkpoint

        save_checkpoint(teacher.params, out_dir / "teacher.ckpt", meta={"role": "synthetic-teacher"})
    return manifest, gt


# ---------------------------------------------------------------------------
# Cross-validation splitting and field selection
# ---------------------------------------------------------------------------


def split_cross_validation(
    manifest: DatasetManifest, k: int, seed: int
) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    """Grouped, farm-stratified k-fold split over (field, season) keys.

    Each farm's shuffled fields are dealt round-robin over the folds (starting
    from the currently least-loaded fold), so per-farm fold counts differ by at
    most one and whole fields never straddle folds.
    """
    if k < 2:
        raise ConfigError("k must be >= 2")
    keys = manifest.keys()
    if len(keys) < k:
        raise InfeasibleSplitError(f"{len(keys)} fields cannot fill {k} folds")
    by_farm: dict[str, list[str]] = {}
    for e in manifest.entries:
        by_farm.setdefault(e.farm_id, []).append(e.key())
    folds: list[list[str]] = [[] for _ in range(k)]
    for farm_id in sorted(by_farm):
        farm_keys = sorted(by_farm[farm_id])
        rng = rngmod.stream(seed, "cv", farm_id)
        rng.shuffle(farm_keys)
        order = sorted(range(k), key=lambda f: (len(folds[f]), f))
        for i, key in enumerate(farm_keys):
            folds[order[i % k]].append(key)
    result = []
    for f in range(k):
        val = tuple(sorted(folds[f]))
        train = tuple(sorted(key for g in range(k) if g != f for key in folds[g]))
        result.append((train, val))
    return result


def select_fields_for_explanation(
    manifest: DatasetManifest, max_per_farm: int, seed: int
) -> list[str]:
    """Seeded uniform pick of at most ``max_per_farm`` (field, season) keys per farm."""
    if max_per_farm < 1:
        raise ConfigError("max_per_farm must be >= 1")
    selected: list[str] = []
    by_farm: dict[str, list[str]] = {}
    for e in manifest.entries:
        by_farm.setdefault(e.farm_id, []).append(e.key())
    for farm_id in sorted(by_farm):
        farm_keys = sorted(by_farm[farm_id])
        if len(farm_keys) <= max_per_farm:
            selected.extend(farm_keys)
            continue
        rng = rngmod.stream(seed, "select", farm_id)
        picks = rng.choice(len(farm_keys), size=max_per_farm, replace=False)
        selected.extend(farm_keys[i] for i in sorted(picks))
    return selected
