import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from tkat.data import (DataError, MaxScaler, MovingMedianScaler, RawSeriesTable, audit_sample,
                       calendar_features, generate_synthetic, load_prepared_cached, make_windows,
                       minmax_fit_transform, moving_median_scale, prepare_dataset, read_csv,
                       split_dataset, split_indices, trailing_medians, write_csv)

positive = arrays(np.float64, 60, elements=st.floats(0.01, 1e4, allow_nan=False))


class TestMovingMedian:
    def test_constant_series(self):
        out = moving_median_scale(np.full(50, 3.7), window=5, horizon=2)
        assert np.isnan(out[:6]).all()
        np.testing.assert_array_equal(out[6:], 1.0)

    def test_hand_indexed_example(self):
        # 1-indexed t=10: denominator median(x6..x9) = 7.5
        out = moving_median_scale(np.arange(1.0, 401.0), window=4, horizon=1)
        assert out[9] == 10 / 7.5
        assert np.isnan(out[3]) and not np.isnan(out[4])

    def test_matches_numpy_median(self):
        x = np.random.default_rng(0).lognormal(size=(80, 3))
        ref = np.stack([np.median(x[s:s + 6], axis=0) for s in range(75)])
        np.testing.assert_array_equal(trailing_medians(x, 6), ref)

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(2, 8))
    def test_longer_horizon_shifts_denominators(self, tau, extra, window):
        x = np.random.default_rng(tau * 100 + extra).lognormal(size=60)
        d1 = x / moving_median_scale(x, window, tau)
        d2 = x / moving_median_scale(x, window, tau + extra)
        valid = ~np.isnan(d2)
        np.testing.assert_allclose(d2[valid], np.roll(d1, extra)[valid], rtol=1e-14)

    @given(positive, st.floats(1e-3, 1e3))
    def test_scale_equivariance(self, x, c):
        np.testing.assert_allclose(moving_median_scale(c * x, 7, 2), moving_median_scale(x, 7, 2),
                                   rtol=1e-12, equal_nan=True)

    def test_zero_median_flagged(self):
        x = np.concatenate([np.zeros(10), np.ones(10)])
        out = moving_median_scale(x, 4, 1)
        # windows holding three or more zeros have median 0; two zeros and two ones give 0.5
        assert np.isnan(out[4:12]).all()
        assert out[12] == 2.0 and out[-1] == 1.0

    def test_too_short(self):
        with pytest.raises(DataError):
            moving_median_scale(np.ones(5), 4, 1)

    def test_transformer_wrapper(self):
        x = np.random.default_rng(0).lognormal(size=(40, 2))
        np.testing.assert_allclose(MovingMedianScaler(5, 2).fit_transform(x), moving_median_scale(x, 5, 2),
                                   equal_nan=True, rtol=0)


class TestMaxScaling:
    def test_train_max_maps_to_one_and_test_unclipped(self):
        x = np.array([0.0, 2.0, 4.0, 1.0, 8.0])
        scaled, sc = minmax_fit_transform(x, slice(0, 4))
        assert scaled[2] == 1.0 and scaled[4] == 2.0

    def test_all_zero_rejected(self):
        with pytest.raises(DataError):
            MaxScaler().fit(np.zeros((4, 2)))

    def test_ignores_nan_rows(self):
        sc = MaxScaler().fit(np.array([[np.nan, 1.0], [2.0, 3.0]]))
        np.testing.assert_array_equal(sc.max_, [2.0, 3.0])


class TestCalendar:
    @pytest.mark.parametrize("stamp,expected", [("2020-01-06T00", [0.0, 0.0]),
                                                ("2020-01-12T23", [1.0, 1.0]),
                                                ("2020-01-08T12", [12 / 23, 2 / 6])])
    def test_values(self, stamp, expected):
        np.testing.assert_array_equal(calendar_features(np.array([stamp], dtype="datetime64[h]"))[0], expected)

    def test_range(self):
        ts = np.datetime64("2021-03-01T00") + np.arange(500).astype("timedelta64[h]")
        f = calendar_features(ts)
        assert f.min() == 0.0 and f.max() == 1.0


class TestWindows:
    def _table(self, n=40, f=4):
        return np.arange(n * f, dtype=float).reshape(n, f)

    def test_count_and_boundaries(self):
        feats = self._table()
        w = make_windows(feats, feats[:, 0], [2, 3], past_len=5, horizon=3)
        assert len(w) == 40 - 5 - 3 + 1
        assert w.target[-1, -1] == feats[-1, 0]
        np.testing.assert_array_equal(w.past[0], feats[:5])
        np.testing.assert_array_equal(w.future[0], feats[5:8, 2:])

    def test_degenerate_shapes(self):
        feats = np.random.default_rng(0).normal(size=(10, 21))
        w = make_windows(feats, feats[:, 0], [19, 20], 1, 1)
        assert (w.past.shape[1:], w.future.shape[1:], w.target.shape[1:]) == ((1, 21), (1, 2), (1,))

    def test_too_few_rows(self):
        with pytest.raises(DataError):
            make_windows(self._table(5), np.zeros(5), [0], 4, 2)


class TestSplit:
    def test_hundred(self):
        tr, va, te = split_indices(100)
        assert (len(tr), len(va), len(te)) == (64, 16, 20)
        assert tr[-1] < va[0] and va[-1] < te[0]

    def test_too_few(self):
        with pytest.raises(DataError):
            split_indices(9)

    @given(st.integers(10, 100_000))
    def test_partition(self, n):
        parts = split_indices(n)
        np.testing.assert_array_equal(np.concatenate(parts), np.arange(n))
        assert abs(len(parts[2]) - n / 5) <= 1


class TestTable:
    def test_rejects_gap(self):
        ts = np.array(["2020-01-01T00", "2020-01-01T02"], dtype="datetime64[h]")
        with pytest.raises(DataError):
            RawSeriesTable(ts, np.ones((2, 1)), ["A"], "A")

    def test_rejects_negative(self):
        ts = np.array(["2020-01-01T00", "2020-01-01T01"], dtype="datetime64[h]")
        with pytest.raises(DataError):
            RawSeriesTable(ts, np.array([[1.0], [-1.0]]), ["A"], "A")

    def test_csv_round_trip(self, tmp_path):
        t = generate_synthetic(200, 3, seed=4)
        write_csv(t, tmp_path / "d.csv")
        back = read_csv(tmp_path / "d.csv")
        assert back.columns == t.columns and back.target == "ASSET1"
        np.testing.assert_array_equal(back.timestamps, t.timestamps)
        np.testing.assert_allclose(back.values, t.values, rtol=1e-9)
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "timestamp,ASSET1,ASSET2,ASSET3"

    def test_synthetic_deterministic(self):
        a, b = generate_synthetic(300, 2, 7), generate_synthetic(300, 2, 7)
        assert a.values.tobytes() == b.values.tobytes()
        assert (a.values > 0).all()


@pytest.fixture(scope="module")
def prepared():
    table = generate_synthetic(1200, 3, seed=1)
    return table, prepare_dataset(table, past_len=12, horizon=3, median_window=48)


class TestPrepare:
    def test_shapes_and_known_columns(self, prepared):
        _, d = prepared
        assert d.train.past.shape[1:] == (12, 5)
        assert d.train.future.shape[1:] == (3, 2)
        np.testing.assert_array_equal(d.train.future[0], d.train.past[3, -3:, 3:])
        assert d.n_features == 5 and d.n_known == 2

    def test_first_anchor_after_dropped_prefix(self, prepared):
        _, d = prepared
        # 48 + 3 - 1 rows have no denominator; the first past window starts right after them
        assert d.train.anchors[0] == 48 + 3 - 1 + 12 - 1

    def test_training_assets_within_unit_range(self, prepared):
        _, d = prepared
        assert d.train.past[..., :3].max() <= 1.0 and d.train.past.min() >= 0.0

    def test_chronological(self, prepared):
        _, d = prepared
        assert d.train.anchors[-1] < d.val.anchors[0] < d.test.anchors[0]

    def test_no_foresight(self, prepared):
        table, d = prepared
        rng = np.random.default_rng(0)
        for split in (d.train, d.val, d.test):
            for i in rng.choice(len(split), 20, replace=False):
                past, fut = audit_sample(table, d, int(split.anchors[i]), 12, 3)
                assert past.tobytes() == split.past[i].tobytes()
                assert fut.tobytes() == split.future[i].tobytes()

    def test_deterministic(self, prepared):
        table, d = prepared
        again = prepare_dataset(table, 12, 3, 48)
        assert again.test.past.tobytes() == d.test.past.tobytes()

    def test_cache_round_trip(self, tmp_path):
        write_csv(generate_synthetic(600, 2, 3), tmp_path / "s.csv")
        a = load_prepared_cached(tmp_path / "s.csv", 6, 2, 24, cache_dir=tmp_path / "cache")
        assert len(list((tmp_path / "cache").glob("*.npz"))) == 1
        b = load_prepared_cached(tmp_path / "s.csv", 6, 2, 24, cache_dir=tmp_path / "cache")
        for s in ("train", "val", "test"):
            assert getattr(a, s).past.tobytes() == getattr(b, s).past.tobytes()
            assert getattr(a, s).target.tobytes() == getattr(b, s).target.tobytes()
        np.testing.assert_array_equal(a.scaler.train_max, b.scaler.train_max)

    def test_split_dataset(self, prepared):
        _, d = prepared
        tr, va, te = split_dataset(d.train)
        assert len(tr) + len(va) + len(te) == len(d.train)
