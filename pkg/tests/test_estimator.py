import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from rise import RiseImputer
from rise.core import MaskedSeries
from rise.data import SyntheticSpec, generate_synthetic
from rise.validation import as_masked_series, check_encoder, check_instance, check_series

KW = dict(d=4, d_d=3, d_h=6, n_classes=8, n_bin=5, epochs=1, batch_size=4, lr=1e-2)


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(SyntheticSpec(n_series=12, length=30, seed=4))


def test_as_masked_series_from_nan_array():
    s = as_masked_series(np.array([1.0, np.nan, 3.0]))
    assert s.m.tolist() == [1, 0, 1]
    assert s.t.tolist() == [0.0, 1.0, 2.0]
    with pytest.raises(ValueError):
        as_masked_series(np.ones((2, 2)))


def test_check_series_shapes(corpus):
    assert len(check_series(corpus)) == 12
    assert len(check_series(np.ones((3, 5)))) == 3
    assert len(check_series(np.ones(5))) == 1
    assert len(check_series([np.ones(4), MaskedSeries([0.0], [1.0], [1])])) == 2
    with pytest.raises(ValueError):
        check_series([])


def test_check_names():
    assert check_instance("gru-d") == "gru-d"
    with pytest.raises(ValueError):
        check_instance("lstm")
    with pytest.raises(ValueError):
        check_encoder("fourier")


def test_get_params_and_clone():
    model = RiseImputer(instance="rits-i", encoder="gru", **KW)
    params = model.get_params()
    assert params["instance"] == "rits-i" and params["d_h"] == 6
    other = clone(model).set_params(lr=0.5)
    assert other.lr == 0.5 and model.lr == 1e-2


def test_not_fitted():
    with pytest.raises(NotFittedError):
        RiseImputer().predict(np.ones(5))


def test_fit_predict_transform_score(corpus):
    model = RiseImputer(instance="gru-d", encoder="bin", **KW).fit(corpus.series[:10], validation=corpus.series[10:])
    preds = model.predict(corpus.series[:2])
    assert [len(p) for p in preds] == [30, 30]
    filled = model.transform(corpus.series[:2])
    for s, f, p in zip(corpus.series, filled, preds):
        np.testing.assert_array_equal(f.m, s.m)
        np.testing.assert_array_equal(f.x[s.m == 1], s.observed)
        missing = np.flatnonzero(s.m == 0)
        missing = missing[missing > 0]
        np.testing.assert_array_equal(f.x[missing], p[missing])
        assert np.all(np.isfinite(f.x))
    assert model.score(corpus.series[10:]) == -model.evaluate(corpus.series[10:]).mdape


def test_fit_holds_out_validation_by_default(corpus):
    model = RiseImputer(**KW).fit(corpus.series)
    assert len(model.log_) == 1
    with pytest.raises(ValueError):
        RiseImputer(**KW).fit(corpus.series[:1])
    with pytest.raises(ValueError):
        RiseImputer(selection="median", **KW).fit(corpus.series)


def test_selection_slot(corpus):
    model = RiseImputer(selection="mape", **KW).fit(corpus.series)
    for k, v in model.checkpoint.best_mape.params.items():
        np.testing.assert_array_equal(model.network_.params[k].data, v)


def test_save_load_round_trip(corpus, tmp_path):
    model = RiseImputer(instance="zerofill", encoder="ffw", **KW).fit(corpus.series)
    model.save(tmp_path / "m.npz")
    back = RiseImputer.load(tmp_path / "m.npz")
    assert back.get_params() == model.get_params()
    for a, b in zip(model.predict(corpus.series), back.predict(corpus.series)):
        np.testing.assert_array_equal(a, b)


def test_accepts_plain_arrays():
    rng = np.random.default_rng(0)
    X = rng.uniform(50, 150, (6, 25)).round(1)
    X[rng.random(X.shape) < 0.3] = np.nan
    X[:, 0] = 100.0
    model = RiseImputer(**KW).fit(X)
    out = model.transform(X[:1])[0]
    assert not np.any(np.isnan(out.x))
