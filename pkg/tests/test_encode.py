"""Encoding path tests, each against an independent oracle."""
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentsteer.core import BANDS, COARSE, FINE, MIDDLE, FeatureMap, PipelineConfig
from latentsteer.encode import (
    BandLatents,
    CalibrationStats,
    channel_average,
    combine_stats,
    encode_frame,
    new_band_stats,
    partition_regions,
    standardize,
    update_calibration,
    weighted_combine,
)
from latentsteer.errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    LayerMismatchError,
    NotCalibratedError,
)


def naive_channel_average(data):
    """Reference: explicit per-channel loop with fsum accumulation."""
    c, h, w = data.shape
    out = np.empty(c)
    for ch in range(c):
        out[ch] = math.fsum(
            data[ch, i, j] for i in range(h) for j in range(w)
        ) / (h * w)
    return out


def naive_weighted_combine(vectors, weights):
    dim = len(vectors[0])
    return np.array([
        math.fsum(w * v[k] for v, w in zip(vectors, weights))
        for k in range(dim)
    ])


class TestChannelAverage:
    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(11)
        data = rng.normal(size=(8, 5, 7))
        got = channel_average(data)
        want = naive_channel_average(data)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_accepts_feature_map(self):
        fm = FeatureMap("x", np.full((3, 2, 2), 4.0))
        assert np.array_equal(channel_average(fm), [4.0, 4.0, 4.0])

    def test_constant_channels(self):
        data = np.stack([np.full((4, 4), v) for v in (-1.0, 0.0, 2.5)])
        assert np.array_equal(channel_average(data), [-1.0, 0.0, 2.5])

    def test_rejects_wrong_rank(self):
        with pytest.raises(ContractError):
            channel_average(np.zeros((4, 4)))

    def test_rejects_empty_spatial(self):
        with pytest.raises(DegenerateInputError):
            channel_average(np.zeros((4, 0, 4)))

    @given(
        c=st.integers(1, 6), h=st.integers(1, 6), w=st.integers(1, 6),
        seed=st.integers(0, 10_000),
    )
    @settings(max_examples=40, deadline=None)
    def test_oracle_property(self, c, h, w, seed):
        data = np.random.default_rng(seed).normal(scale=10.0, size=(c, h, w))
        np.testing.assert_allclose(
            channel_average(data), naive_channel_average(data), rtol=1e-10, atol=1e-10
        )


class TestWeightedCombine:
    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(5)
        vecs = [rng.normal(size=16) for _ in range(4)]
        ws = [0.25, 0.0, 1.5, 0.75]
        np.testing.assert_allclose(
            weighted_combine(vecs, ws), naive_weighted_combine(vecs, ws),
            rtol=1e-12, atol=1e-12,
        )

    def test_single_vector_identity_weight(self):
        v = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(weighted_combine([v], [1.0]), v)

    def test_no_renormalization(self):
        v = np.ones(4)
        out = weighted_combine([v, v], [1.0, 1.0])
        assert np.array_equal(out, 2.0 * np.ones(4))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ContractError):
            weighted_combine([np.zeros(3)], [1.0, 2.0])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ContractError):
            weighted_combine([np.zeros(3), np.zeros(4)], [1.0, 1.0])

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            weighted_combine([], [])

    def test_nan_weight_rejected(self):
        with pytest.raises(ContractError):
            weighted_combine([np.zeros(2)], [float("nan")])

    @given(
        n=st.integers(1, 5), dim=st.integers(1, 12), seed=st.integers(0, 10_000)
    )
    @settings(max_examples=40, deadline=None)
    def test_oracle_property(self, n, dim, seed):
        rng = np.random.default_rng(seed)
        vecs = [rng.normal(scale=5.0, size=dim) for _ in range(n)]
        ws = rng.uniform(0, 2, size=n).tolist()
        np.testing.assert_allclose(
            weighted_combine(vecs, ws), naive_weighted_combine(vecs, ws),
            rtol=1e-9, atol=1e-9,
        )


class TestPartitionRegions:
    def test_even_grid(self):
        regions = partition_regions(16, 16)
        assert regions[COARSE] == (0, 8, 0, 16)
        assert regions[MIDDLE] == (8, 16, 0, 8)
        assert regions[FINE] == (8, 16, 8, 16)

    def test_odd_grid_floor_split(self):
        regions = partition_regions(7, 7)
        assert regions[COARSE] == (0, 3, 0, 7)
        assert regions[MIDDLE] == (3, 7, 0, 3)
        assert regions[FINE] == (3, 7, 3, 7)

    def test_minimum_grid(self):
        regions = partition_regions(2, 2)
        assert all(r.cells >= 1 for r in regions.values())

    @pytest.mark.parametrize("rows,cols", [(1, 8), (8, 1), (0, 4), (1, 1)])
    def test_degenerate_rejected(self, rows, cols):
        with pytest.raises(DegenerateInputError):
            partition_regions(rows, cols)

    @given(rows=st.integers(2, 64), cols=st.integers(2, 64))
    @settings(max_examples=80, deadline=None)
    def test_every_cell_exactly_once(self, rows, cols):
        counts = np.zeros((rows, cols), dtype=int)
        for region in partition_regions(rows, cols).values():
            counts[region.row_start:region.row_stop,
                   region.col_start:region.col_stop] += 1
        assert np.all(counts == 1)

    def test_extract_shapes(self):
        data = np.arange(2 * 6 * 4, dtype=float).reshape(2, 6, 4)
        regions = partition_regions(6, 4)
        assert regions[COARSE].extract(data).shape == (2, 3, 4)
        assert regions[MIDDLE].extract(data).shape == (2, 3, 2)
        assert regions[FINE].extract(data).shape == (2, 3, 2)


class TestCalibrationStats:
    def test_matches_batch_moments(self):
        rng = np.random.default_rng(21)
        samples = rng.normal(loc=3.0, scale=2.0, size=(500, 8))
        stats = CalibrationStats(8)
        for s in samples:
            update_calibration(stats, s)
        np.testing.assert_allclose(stats.mean, samples.mean(axis=0), rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(
            stats.variance, samples.var(axis=0), rtol=1e-9, atol=1e-9
        )

    def test_not_ready_below_two(self):
        stats = CalibrationStats(4)
        assert not stats.ready
        with pytest.raises(NotCalibratedError):
            stats.standardize(np.zeros(4))
        stats.update(np.zeros(4))
        assert not stats.ready
        stats.update(np.ones(4))
        assert stats.ready

    def test_standardize_centers_and_scales(self):
        rng = np.random.default_rng(33)
        samples = rng.normal(loc=-5.0, scale=4.0, size=(2000, 6))
        stats = CalibrationStats(6)
        for s in samples:
            stats.update(s)
        out = np.stack([standardize(s, stats) for s in samples])
        assert np.all(np.abs(out.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(out.std(axis=0) - 1.0) < 1e-9)

    def test_zero_variance_uses_epsilon_floor(self):
        stats = CalibrationStats(2)
        stats.update(np.array([1.0, 1.0]))
        stats.update(np.array([1.0, 1.0]))
        out = stats.standardize(np.array([1.0 + 1e-6, 1.0]))
        assert out[0] == pytest.approx(1.0)
        assert out[1] == 0.0

    def test_update_shape_checked(self):
        stats = CalibrationStats(3)
        with pytest.raises(ContractError):
            stats.update(np.zeros(4))

    def test_json_round_trip(self):
        stats = CalibrationStats(3)
        for v in ([1.0, 2.0, 3.0], [2.0, 0.0, 6.0], [0.0, 4.0, 0.0]):
            stats.update(np.array(v))
        blob = json.dumps(stats.to_json_dict("mock://extractor?seed=1", "conv5_3"))
        loaded, extractor_id, layer = CalibrationStats.from_json_dict(json.loads(blob))
        assert (extractor_id, layer) == ("mock://extractor?seed=1", "conv5_3")
        assert loaded.count == stats.count
        np.testing.assert_allclose(loaded.mean, stats.mean)
        np.testing.assert_allclose(loaded.variance, stats.variance, atol=1e-12)

    def test_json_rejects_bad_version(self):
        stats = CalibrationStats(2)
        obj = stats.to_json_dict("e", "l")
        obj["version"] = 99
        with pytest.raises(ConfigError):
            CalibrationStats.from_json_dict(obj)

    def test_json_rejects_length_mismatch(self):
        obj = CalibrationStats(2).to_json_dict("e", "l")
        obj["mean"] = [0.0]
        with pytest.raises(ConfigError):
            CalibrationStats.from_json_dict(obj)

    def test_copy_is_independent(self):
        stats = CalibrationStats(2)
        stats.update(np.array([1.0, 1.0]))
        clone = stats.copy()
        stats.update(np.array([3.0, 3.0]))
        assert clone.count == 1 and stats.count == 2

    @given(seed=st.integers(0, 10_000), n=st.integers(2, 60), dim=st.integers(1, 8))
    @settings(max_examples=40, deadline=None)
    def test_welford_equals_numpy(self, seed, n, dim):
        samples = np.random.default_rng(seed).normal(scale=7.0, size=(n, dim))
        stats = CalibrationStats(dim)
        for s in samples:
            stats.update(s)
        np.testing.assert_allclose(stats.mean, samples.mean(axis=0), rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(stats.variance, samples.var(axis=0), rtol=1e-8, atol=1e-8)


class TestCombineStats:
    def test_two_layer_formula(self):
        rng = np.random.default_rng(40)
        a = CalibrationStats(4)
        b = CalibrationStats(4)
        for _ in range(50):
            a.update(rng.normal(loc=1.0, size=4))
        for _ in range(30):
            b.update(rng.normal(loc=-2.0, size=4))
        seeded = combine_stats([a, b], [0.5, 2.0])
        np.testing.assert_allclose(seeded.mean, 0.5 * a.mean + 2.0 * b.mean)
        np.testing.assert_allclose(
            seeded.variance, 0.25 * a.variance + 4.0 * b.variance, rtol=1e-9
        )
        assert seeded.count == 30

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ContractError):
            combine_stats([CalibrationStats(2), CalibrationStats(3)], [1.0, 1.0])


def make_features(seed=0, channels=8, shapes=((4, 4), (2, 2))):
    rng = np.random.default_rng(seed)
    return {
        f"layer{i}": FeatureMap(f"layer{i}", rng.normal(size=(channels, h, w)))
        for i, (h, w) in enumerate(shapes)
    }


class TestEncodeFrame:
    def config(self, **kw):
        base = dict(
            layers={"layer0": 0.75, "layer1": 0.25},
            z_dim=8,
            standardize=False,
        )
        base.update(kw)
        return PipelineConfig(**base)

    def test_matches_manual_composition(self):
        features = make_features(seed=2)
        cfg = self.config()
        got = encode_frame(features, cfg)
        for band, latent in got.as_dict().items():
            per_layer = []
            for name in ("layer0", "layer1"):
                fm = features[name]
                region = partition_regions(fm.rows, fm.cols)[band]
                per_layer.append(naive_channel_average(region.extract(fm.data)))
            want = naive_weighted_combine(per_layer, [0.75, 0.25])
            np.testing.assert_allclose(latent.values, want, rtol=1e-9, atol=1e-9)

    def test_missing_layer_rejected(self):
        features = make_features()
        del features["layer1"]
        with pytest.raises(LayerMismatchError):
            encode_frame(features, self.config())

    def test_channel_count_mismatch_rejected(self):
        features = make_features(channels=6)
        with pytest.raises(LayerMismatchError):
            encode_frame(features, self.config())

    def test_extra_layers_ignored(self):
        features = make_features()
        features["unused"] = FeatureMap("unused", np.zeros((3, 2, 2)))
        encode_frame(features, self.config())

    def test_standardization_applied_per_band(self):
        rng = np.random.default_rng(77)
        cfg = self.config(standardize=True)
        stats = new_band_stats(8)
        raw = []
        for i in range(200):
            bands = encode_frame(make_features(seed=1000 + i), cfg.updated(standardize=False))
            raw.append(bands)
            for band, latent in bands.as_dict().items():
                stats[band].update(latent.values)
        out = encode_frame(make_features(seed=1000), cfg, band_stats=stats)
        for band, latent in out.as_dict().items():
            want = stats[band].standardize(raw[0].as_dict()[band].values)
            np.testing.assert_allclose(latent.values, want, rtol=1e-12)

    def test_standardize_without_stats_gives_raw(self):
        cfg = self.config(standardize=True)
        raw_cfg = self.config(standardize=False)
        features = make_features(seed=5)
        a = encode_frame(features, cfg, band_stats=None)
        b = encode_frame(features, raw_cfg)
        np.testing.assert_array_equal(a.coarse.values, b.coarse.values)

    def test_unready_stats_raise(self):
        cfg = self.config(standardize=True)
        with pytest.raises(NotCalibratedError):
            encode_frame(make_features(), cfg, band_stats=new_band_stats(8))

    def test_result_order_independent_of_mapping_order(self):
        features = make_features(seed=9)
        cfg_a = self.config(layers={"layer0": 0.6, "layer1": 0.4})
        cfg_b = self.config(layers={"layer1": 0.4, "layer0": 0.6})
        a = encode_frame(features, cfg_a)
        b = encode_frame(features, cfg_b)
        assert np.array_equal(a.fine.values, b.fine.values)
