import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tkat.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from tkat.data import generate_synthetic, prepare_dataset
from tkat.estimators import (ForecastRegressor, TKATRegressor, check_windows, pack_windows,
                             unpack_windows)
from tkat.zoo import MODEL_NAMES, ModelSize, build_model

SMALL = dict(past_len=6, horizon=2, d_model=4, n_heads=2, max_epochs=2, batch_size=32)


@pytest.fixture(scope="module")
def windows():
    d = prepare_dataset(generate_synthetic(500, 2, seed=3), past_len=6, horizon=2, median_window=24)
    return d.train.subset(slice(0, 120)), d.test


class TestPacking:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        past, fut = rng.normal(size=(5, 6, 4)), rng.normal(size=(5, 2, 2))
        X = pack_windows(past, fut)
        assert X.shape == (5, 6 * 4 + 2 * 2)
        p2, f2 = unpack_windows(X, 6, 2, 2)
        np.testing.assert_array_equal(p2, past)
        np.testing.assert_array_equal(f2, fut)

    def test_bad_width(self):
        with pytest.raises(ValueError):
            unpack_windows(np.zeros((3, 25)), 6, 2, 2)

    def test_rejects_nan(self):
        past = np.zeros((2, 6, 4))
        past[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            check_windows((past, np.zeros((2, 2, 2))), 6, 2, 2)

    def test_rejects_wrong_future(self):
        with pytest.raises(ValueError):
            check_windows((np.zeros((2, 6, 4)), np.zeros((2, 3, 2))), 6, 2, 2)


class TestSklearnContract:
    def test_get_params_and_clone(self):
        est = ForecastRegressor(model="GRU", units=(8,), **SMALL)
        params = est.get_params()
        assert params["model"] == "GRU" and params["units"] == (8,)
        twin = clone(est)
        assert twin.get_params() == params and twin is not est

    def test_tkat_regressor_params(self):
        est = TKATRegressor(variant="A", cell="LSTM", **SMALL)
        assert est.get_params()["variant"] == "A"
        assert est._model_name() == "TKATN-A"
        assert clone(est).set_params(cell="TKAN")._model_name() == "TKAT-A"

    def test_not_fitted(self, windows):
        with pytest.raises(NotFittedError):
            ForecastRegressor(**SMALL).predict(windows[1])

    def test_unknown_model(self, windows):
        with pytest.raises(ValueError):
            ForecastRegressor(model="ARIMA", **SMALL).fit(windows[0], windows[0].target)


@pytest.mark.parametrize("name", ["TKAT", "GRU", "MLP"])
def test_fit_predict_score(windows, name):
    train, test = windows
    est = ForecastRegressor(model=name, units=(4,), **SMALL).fit(train, train.target)
    pred = est.predict(test)
    assert pred.shape == (len(test), 2) and np.isfinite(pred).all()
    assert np.isfinite(est.score(test, test.target))
    assert len(est.history_) == 2 and est.n_parameters_ > 0
    packed = pack_windows(test.past, test.future)
    np.testing.assert_array_equal(est.predict(packed), pred)


def test_fit_is_seeded(windows):
    train, test = windows
    a = TKATRegressor(seed=4, **SMALL).fit(train, train.target).predict(test)
    b = TKATRegressor(seed=4, **SMALL).fit(train, train.target).predict(test)
    assert a.tobytes() == b.tobytes()


def test_feature_count_checked(windows):
    train, test = windows
    est = ForecastRegressor(model="MLP", units=(4,), **SMALL).fit(train, train.target)
    with pytest.raises(ValueError):
        est.predict((test.past[..., :3], test.future))


class TestCheckpoint:
    @pytest.mark.parametrize("name", MODEL_NAMES)
    def test_bit_exact_round_trip(self, tmp_path, name):
        size = ModelSize(d_model=4, n_heads=2, units=(3, 3), grid_range=(-2.0, 2.0))
        args = dict(n_observed=2, n_known=2, past_len=4, horizon=2, seed=7, size=size)
        model = build_model(name, **args)
        save_checkpoint(model, tmp_path / "ck", name, args)
        back, manifest = load_checkpoint(tmp_path / "ck")
        assert manifest["n_params"] == model.num_parameters()
        for (na, ta), (nb, tb) in zip(model.named_parameters(), back.named_parameters()):
            assert na == nb and ta.data.tobytes() == tb.data.tobytes()
        rng = np.random.default_rng(0)
        past, fut = rng.uniform(0, 1, (3, 4, 4)), rng.uniform(0, 1, (3, 2, 2))
        assert model(past, fut).data.tobytes() == back(past, fut).data.tobytes()

    def test_missing_and_bad_format(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nothing")
        model = build_model("GRU", 1, 1, 3, 1, size=ModelSize(units=(2,)))
        save_checkpoint(model, tmp_path / "g", "GRU", dict(n_observed=1, n_known=1, past_len=3, horizon=1,
                                                          size=ModelSize(units=(2,))))
        js = tmp_path / "g.json"
        js.write_text(js.read_text().replace('"format": 1', '"format": 99'))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "g")


def test_unknown_zoo_name():
    with pytest.raises(ValueError):
        build_model("Prophet", 1, 1, 3, 1)
