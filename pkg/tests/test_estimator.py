import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from slmr import SLMRDetector, synth_generate
from slmr.pipeline import DataError

SMALL = dict(window=16, channels=8, hidden=16, epochs=2, batch_size=64)


@pytest.fixture(scope="module")
def data():
    return synth_generate(k=3, n=2000, seed=4)


@pytest.fixture(scope="module")
def fitted(data):
    return SLMRDetector(**SMALL).fit(data.train)


def test_params_round_trip_through_clone():
    est = SLMRDetector(window=80, senet=False, mask_ratio=0.2)
    params = est.get_params()
    assert params["window"] == 80 and params["senet"] is False
    assert clone(est).get_params() == params


def test_configs_follow_params():
    est = SLMRDetector(window=80, mask_ratio=0.2, mask_mean_len=4.0, random_state=9, odd_even=False)
    cfg = est.model_config(5)
    assert (cfg.window, cfg.n_features, cfg.odd_even) == (80, 5, False)
    tc = est.train_config()
    assert tc.mask_spec.ratio == 0.2 and tc.mask_spec.mean_len == 4.0 and tc.seed == 9


def test_invalid_params_fail_at_fit():
    with pytest.raises(ValueError):
        SLMRDetector(window=15).fit(np.zeros((50, 2)))


def test_unfitted_use_raises():
    with pytest.raises(NotFittedError):
        SLMRDetector().score_samples(np.zeros((200, 2)))


def test_rejects_nan_input():
    with pytest.raises(ValueError):
        SLMRDetector(**SMALL).fit(np.full((50, 2), np.nan))


def test_score_and_predict_shapes(fitted, data):
    scores = fitted.score_samples(data.test)
    assert scores.shape == (len(data.test) - 16,)
    report = fitted.fit_threshold(data.test, data.labels)
    pred = fitted.predict(data.test)
    assert pred.shape == scores.shape and set(np.unique(pred)) <= {0, 1}
    assert report.threshold == fitted.threshold_
    assert fitted.evaluate(data.test, data.labels).f1 == report.f1


def test_feature_count_checked(fitted):
    with pytest.raises(DataError):
        fitted.score_samples(np.zeros((100, 4)))


def test_label_length_checked(fitted, data):
    with pytest.raises(DataError):
        fitted.fit_threshold(data.test, data.labels[:-1])


def test_history_recorded(fitted):
    assert len(fitted.history_.train_loss) == 2 and 1 <= fitted.history_.best_epoch <= 2


def test_save_load_preserves_scores(fitted, data, tmp_path):
    fitted.fit_threshold(data.test, data.labels)
    fitted.save(tmp_path / "est.json")
    back = SLMRDetector.load(tmp_path / "est.json")
    assert back.get_params() == fitted.get_params()
    assert back.threshold_ == fitted.threshold_
    assert np.array_equal(back.score_samples(data.test), fitted.score_samples(data.test))


def test_fit_is_deterministic(data):
    a = SLMRDetector(**SMALL, random_state=3).fit(data.train[:600])
    b = SLMRDetector(**SMALL, random_state=3).fit(data.train[:600])
    assert a.history_.val_loss == b.history_.val_loss
