from datetime import date

import numpy as np
import pytest

from tsattr.data import FieldRaster, SyntheticSpec, TimeSeriesSample, generate_synthetic_dataset


def make_sample(values, pad_mask=None, labels=None, pad_value=-1.0):
    values = np.asarray(values, dtype=np.float64)
    if pad_mask is None:
        pad_mask = np.zeros_like(values, dtype=bool)
    if labels is None:
        labels = tuple(f"b{i:02d}" for i in range(values.shape[0]))
    return TimeSeriesSample(values=values, pad_mask=np.asarray(pad_mask, dtype=bool),
                            band_labels=labels, pad_value=pad_value)


def make_raster(yields, values=None, field_id="f00", farm_id="farm00", season="2021",
                n_bands=2, n_steps=3, crop="synthetic"):
    yields = np.asarray(yields, dtype=np.float64)
    H, W = yields.shape
    presence = np.isfinite(yields)
    if values is None:
        rng = np.random.default_rng(0)
        values = rng.uniform(0.1, 0.9, size=(H, W, n_bands, n_steps))
    pad = np.zeros(values.shape, dtype=bool)
    return FieldRaster(
        field_id=field_id, farm_id=farm_id, crop=crop, season=season,
        seeding_date=date(2020, 5, 1), harvesting_date=date(2021, 4, 1),
        band_labels=tuple(f"b{i:02d}" for i in range(values.shape[2])),
        values=np.where(presence[:, :, None, None], values, -1.0),
        pad_mask=np.where(presence[:, :, None, None], pad, True),
        presence=presence,
        yields=np.where(presence, yields, np.nan),
    )


@pytest.fixture(scope="session")
def tiny_linear_dataset(tmp_path_factory):
    """Small linear synthetic dataset shared across tests."""
    out = tmp_path_factory.mktemp("tiny_linear")
    spec = SyntheticSpec(n_farms=2, fields_per_farm=2, grid_size=6, n_bands=3,
                         n_steps=8, generator="linear", noise_sigma=0.0,
                         spatial_smoothness=1.0, seed=11)
    manifest, gt = generate_synthetic_dataset(spec, out)
    return manifest, gt, out
