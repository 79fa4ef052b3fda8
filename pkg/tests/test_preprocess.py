from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsattr import preprocess as pp
from tsattr.errors import (
    CoverageError,
    DataError,
    EmptyFieldError,
    SceneOverflowError,
    WindowError,
)

from conftest import make_raster, make_sample


class TestCleanYieldMap:
    def test_in_range_yields_untouched(self):
        yields = np.random.default_rng(0).uniform(3.0, 5.0, size=(4, 4))
        raster = make_raster(yields)
        cleaned = pp.clean_yield_map(raster)
        np.testing.assert_array_equal(cleaned.presence, raster.presence)
        np.testing.assert_array_equal(cleaned.yields, raster.yields)

    def test_hard_threshold_drops_20t(self):
        yields = np.full((3, 3), 4.0)
        yields[1, 1] = 20.0
        cleaned = pp.clean_yield_map(make_raster(yields))
        assert not cleaned.presence[1, 1]
        assert cleaned.n_pixels == 8

    def test_matches_scripted_reference_filter(self):
        rng = np.random.default_rng(42)
        vals = np.concatenate([rng.normal(4.0, 0.2, size=100), [6.0]])
        yields = np.full((101, 1), np.nan)
        yields[:, 0] = vals
        cleaned = pp.clean_yield_map(make_raster(yields))

        # independent brute-force reference of the three-stage filter
        survivors = [v for v in vals if v <= 15.0]
        m, s = np.mean(survivors), np.std(survivors)
        survivors = [v for v in survivors if m - 3 * s <= v <= m + 3 * s]
        q1, q3 = np.percentile(survivors, [25, 75])
        iqr = q3 - q1
        survivors = [v for v in survivors if q1 - 1.5 * iqr <= v <= q3 + 1.5 * iqr]

        kept = sorted(cleaned.yields[cleaned.presence].tolist())
        assert 6.0 not in kept
        assert kept == sorted(survivors)

    def test_all_dropped_is_an_error(self):
        yields = np.full((2, 2), 20.0)
        with pytest.raises(EmptyFieldError):
            pp.clean_yield_map(make_raster(yields))

    def test_surviving_values_unchanged(self):
        rng = np.random.default_rng(1)
        yields = rng.uniform(2, 6, size=(5, 5))
        yields[0, 0] = 14.9
        raster = make_raster(yields)
        cleaned = pp.clean_yield_map(raster)
        kept = cleaned.presence
        np.testing.assert_array_equal(cleaned.yields[kept], raster.yields[kept])


class TestSampleMonthly:
    labels = ("b00", "b01")

    def test_april_second_year_lands_at_index_15(self):
        scenes = [(date(2021, 4, 10), np.array([0.5, 0.6]))]
        s = pp.sample_monthly(scenes, date(2020, 10, 1), date(2021, 4, 20), self.labels)
        assert s.n_steps == 24
        assert not s.pad_mask[0, 15]
        assert s.values[0, 15] == 0.5
        assert s.pad_mask[:, :15].all() and s.pad_mask[:, 16:].all()

    def test_no_scenes_fully_padded(self):
        s = pp.sample_monthly([], date(2020, 5, 1), date(2021, 4, 1), self.labels)
        assert s.pad_mask.all()
        assert (s.values == -1.0).all()

    def test_two_scenes_in_month_average(self):
        scenes = [
            (date(2021, 3, 2), np.array([0.2, 0.2])),
            (date(2021, 3, 20), np.array([0.4, 0.4])),
        ]
        s = pp.sample_monthly(scenes, date(2020, 10, 1), date(2021, 4, 1), self.labels)
        assert s.values[0, 14] == pytest.approx(0.3)

    def test_cloudy_observation_excluded_from_mean(self):
        scenes = [
            (date(2021, 3, 2), np.array([0.2, np.nan])),
            (date(2021, 3, 20), np.array([0.4, 0.8])),
        ]
        s = pp.sample_monthly(scenes, date(2020, 10, 1), date(2021, 4, 1), self.labels)
        assert s.values[0, 14] == pytest.approx(0.3)
        assert s.values[1, 14] == pytest.approx(0.8)

    def test_out_of_season_scene_ignored(self):
        scenes = [(date(2020, 1, 5), np.array([0.9, 0.9]))]
        s = pp.sample_monthly(scenes, date(2020, 5, 1), date(2021, 4, 1), self.labels)
        assert s.pad_mask.all()

    def test_season_before_window_is_error(self):
        with pytest.raises(WindowError):
            pp.sample_monthly([], date(2019, 5, 1), date(2021, 4, 1), self.labels)


class TestSampleRaw:
    labels = ("b00",)

    def test_trailing_alignment(self):
        scenes = [(date(2020, 6, d), np.array([0.1 * d])) for d in (1, 2, 3)]
        s = pp.sample_raw(scenes, date(2020, 5, 1), date(2020, 9, 1), self.labels)
        assert s.n_steps == 150
        assert s.pad_mask[0, :147].all()
        np.testing.assert_allclose(s.values[0, 147:], [0.1, 0.2, 0.3])

    def test_exact_fit_no_padding(self):
        scenes = [(date(2020, 1, 1), np.array([0.5]))] * 150
        s = pp.sample_raw(scenes, date(2020, 1, 1), date(2020, 12, 1), self.labels)
        assert not s.pad_mask.any()

    def test_overflow_is_error(self):
        scenes = [(date(2020, 1, 1), np.array([0.5]))] * 151
        with pytest.raises(SceneOverflowError):
            pp.sample_raw(scenes, date(2020, 1, 1), date(2020, 12, 1), self.labels)


def _s2_sample(rng=None, T=4):
    rng = rng or np.random.default_rng(0)
    from tsattr.data import S2_BANDS
    values = rng.uniform(0.05, 0.95, size=(12, T))
    return make_sample(values, labels=S2_BANDS)


def _scripted_indices(b: dict) -> dict:
    """Independent transcription of the index formula table."""
    B, G, R = b["B02"], b["B03"], b["B04"]
    RE1, RE2, N = b["B05"], b["B06"], b["B08"]
    osavi = 1.16 * (RE2 - RE1) / (RE2 + RE1 + 0.16)
    return {
        "CIG": (N / G) - 1.0,
        "CIRE": (N / RE1) - 1.0,
        "GNDVI": (N - G) / (N + G),
        "NDVI": (N - R) / (N + R),
        "NDYI": (G - B) / (G + B),
        "RVI": RE2 / R,
        "WDRVI": (0.1 * N - R) / (0.1 * N + R),
        "NGRDI": (G - R) / (G + R),
        "MCARI/OSAVI": (((RE2 - RE1) - 0.2 * (RE2 - G)) * (RE2 / RE1)) / osavi,
        "TCARI/OSAVI": (3 * ((RE2 - RE1) - 0.2 * (RE2 - G) * (RE2 / RE1))) / osavi,
    }


class TestVegetationIndices:
    def test_ndvi_direct_value(self):
        s = _s2_sample()
        values = np.array(s.values)
        values[s.band_labels.index("B08")] = 0.8
        values[s.band_labels.index("B04")] = 0.2
        s = make_sample(values, labels=s.band_labels)
        out, _ = pp.compute_vegetation_indices(s)
        ndvi = out.values[out.band_labels.index("NDVI")]
        np.testing.assert_allclose(ndvi, 0.6, atol=1e-12)

    def test_equal_bands_zero_indices(self):
        s = _s2_sample()
        values = np.array(s.values)
        values[s.band_labels.index("B08")] = values[s.band_labels.index("B03")]
        s = make_sample(values, labels=s.band_labels)
        out, _ = pp.compute_vegetation_indices(s)
        assert np.allclose(out.values[out.band_labels.index("CIG")], 0.0, atol=1e-12)
        assert np.allclose(out.values[out.band_labels.index("GNDVI")], 0.0, atol=1e-12)

    def test_matches_scripted_formula_oracle(self):
        rng = np.random.default_rng(7)
        s = _s2_sample(rng, T=16)
        out, guard = pp.compute_vegetation_indices(s)
        assert not guard.any()
        bands = {name: s.values[s.band_labels.index(name)]
                 for name in ("B02", "B03", "B04", "B05", "B06", "B08")}
        expected = _scripted_indices(bands)
        for i, name in enumerate(out.band_labels):
            np.testing.assert_allclose(out.values[i], expected[name], atol=1e-12, err_msg=name)

    def test_masked_input_propagates(self):
        s = _s2_sample()
        values = np.array(s.values)
        mask = np.zeros_like(values, dtype=bool)
        mask[s.band_labels.index("B04"), 2] = True
        values[mask] = -1.0
        s = make_sample(values, pad_mask=mask, labels=s.band_labels)
        out, _ = pp.compute_vegetation_indices(s)
        assert out.pad_mask[:, 2].all()
        assert not out.pad_mask[:, 0].any()

    def test_denominator_guard_pads_and_flags(self):
        s = _s2_sample()
        values = np.array(s.values)
        values[s.band_labels.index("B03"), 1] = 0.0   # CIG divides by G
        s = make_sample(values, labels=s.band_labels)
        out, guard = pp.compute_vegetation_indices(s)
        cig = out.band_labels.index("CIG")
        assert out.pad_mask[cig, 1]
        assert guard[cig, 1]

    def test_missing_band_is_schema_error(self):
        s = make_sample(np.random.default_rng(0).uniform(0.1, 0.9, size=(3, 4)),
                        labels=("B02", "B03", "B04"))
        with pytest.raises(DataError):
            pp.compute_vegetation_indices(s)


def _monthly_sample(B=2, T=24, season=(9, 15)):
    values = np.full((B, T), -1.0)
    pad = np.ones((B, T), dtype=bool)
    rng = np.random.default_rng(3)
    lo, hi = season
    values[:, lo:hi + 1] = rng.uniform(0.1, 0.9, size=(B, hi - lo + 1))
    pad[:, lo:hi + 1] = False
    return make_sample(values, pad_mask=pad,
                       labels=tuple(f"B{i:02d}" for i in range(B)))


def _full_weather(seeding, harvesting, values=(0.0, 5.0, 10.0, 1.0)):
    from datetime import timedelta
    dates = []
    day = seeding
    while day <= harvesting:
        dates.append(day)
        day += timedelta(days=1)
    return tuple(dates), np.tile(np.asarray(values), (len(dates), 1))


class TestFuseAds:
    seeding = date(2020, 10, 1)
    harvesting = date(2021, 4, 30)

    def _ads(self):
        dates, weather = _full_weather(self.seeding, self.harvesting)
        return pp.AdsFeatures(
            static_soil=np.arange(24, dtype=float),
            static_dem=np.array([120.0, 1.0, 0.1, 7.0, 180.0]),
            weather_dates=dates,
            weather_values=weather,
        )

    def test_elevation_duplicated_in_season(self):
        fused = pp.fuse_ads(_monthly_sample(), self._ads(), self.seeding, self.harvesting)
        row = fused.band_labels.index("dem:dem")
        in_season = slice(9, 16)   # Oct 2020 .. Apr 2021
        assert (fused.values[row, in_season] == 120.0).all()
        assert (fused.values[row, :9] == -1.0).all()
        assert fused.pad_mask[row, :9].all()

    def test_precipitation_monthly_sum(self):
        fused = pp.fuse_ads(_monthly_sample(), self._ads(), self.seeding, self.harvesting)
        row = fused.band_labels.index("weather:precip")
        # December of the first year has 31 days at 1 mm/day
        assert fused.values[row, 11] == pytest.approx(31.0)

    def test_band_count_matches_feature_inventory(self):
        fused = pp.fuse_ads(_monthly_sample(B=12, T=24), pp.AdsFeatures(
            static_soil=np.zeros(24), static_dem=np.zeros(5),
            weather_dates=_full_weather(self.seeding, self.harvesting)[0],
            weather_values=_full_weather(self.seeding, self.harvesting)[1],
        ), self.seeding, self.harvesting)
        assert fused.n_bands == 12 + 24 + 5 + 4
        prefixes = {label.split(":")[0] for label in fused.band_labels}
        assert prefixes == {"s2", "soil", "dem", "weather"}

    def test_weather_gap_is_coverage_error(self):
        dates, weather = _full_weather(self.seeding, self.harvesting)
        ads = pp.AdsFeatures(
            static_soil=np.zeros(24), static_dem=np.zeros(5),
            weather_dates=dates[:-5], weather_values=weather[:-5],
        )
        with pytest.raises(CoverageError):
            pp.fuse_ads(_monthly_sample(), ads, self.seeding, self.harvesting)

    def test_satellite_pads_survive_fusion(self):
        sample = _monthly_sample()
        fused = pp.fuse_ads(sample, self._ads(), self.seeding, self.harvesting)
        np.testing.assert_array_equal(fused.pad_mask[:2], sample.pad_mask)


class TestStandardize:
    def test_constant_band_flagged_unchanged(self):
        s = make_sample(np.full((2, 5), 0.7))
        out, stats = pp.standardize_features([s], [s])
        assert stats.flagged.all()
        np.testing.assert_array_equal(out[0].values, s.values)

    def test_train_standardized_to_unit_stats(self):
        rng = np.random.default_rng(5)
        train = [make_sample(rng.normal(3, 2, size=(2, 6))) for _ in range(50)]
        out, stats = pp.standardize_features(train, train)
        stacked = np.stack([s.values for s in out])
        for b in range(2):
            vals = stacked[:, b, :].ravel()
            assert abs(vals.mean()) < 1e-9
            assert abs(vals.std() - 1.0) < 1e-9

    def test_validation_pixel_matches_hand_computation(self):
        train = [make_sample([[1.0, 3.0]]), make_sample([[5.0, 7.0]])]
        val = [make_sample([[2.0, 2.0]])]
        out, stats = pp.standardize_features(train, val)
        mean = np.mean([1.0, 3.0, 5.0, 7.0])
        std = np.std([1.0, 3.0, 5.0, 7.0])
        np.testing.assert_allclose(out[0].values, (2.0 - mean) / std)

    @given(st.integers(min_value=0, max_value=2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_pad_values_bit_identical(self, seed):
        rng = np.random.default_rng(seed)
        values = rng.normal(size=(3, 5))
        pad = rng.random(size=(3, 5)) < 0.4
        values[pad] = -1.0
        s = make_sample(values, pad_mask=pad)
        out, _ = pp.standardize_features([s], [s])
        np.testing.assert_array_equal(out[0].values[pad], values[pad])
        np.testing.assert_array_equal(out[0].pad_mask, pad)
