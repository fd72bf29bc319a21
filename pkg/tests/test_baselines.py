import numpy as np
import pytest

from app.core.exceptions import BaselineException
from app.services.baseline_service import STAT_NAMES, BaselineService, feature_layout
from tests.conftest import make_window, toy_windows


@pytest.fixture
def service():
    return BaselineService()


def stat(vector: np.ndarray, channel: int, name: str) -> float:
    return float(vector[channel * len(STAT_NAMES) + STAT_NAMES.index(name)])


def test_constant_channel_has_no_spread_or_crossings(service):
    matrix = np.vstack([np.full(120, 0.2), np.linspace(0, 1, 120), np.zeros(120)])
    vector = service.featurize_flat(make_window(matrix, label=0, trace_id="t"))

    assert stat(vector, 0, "std") == pytest.approx(0.0, abs=1e-12)
    assert stat(vector, 0, "zcr") == 0.0
    assert stat(vector, 0, "mean") == pytest.approx(0.2)


def test_dominant_frequency_of_five_hertz_sinusoid(service):
    t = np.arange(120) / 30.0
    matrix = np.vstack([0.5 * np.sin(2 * np.pi * 5.0 * t), np.zeros(120), np.zeros(120)])
    vector = service.featurize_flat(matrix)

    assert stat(vector, 0, "dominant_hz") == pytest.approx(5.0)
    assert stat(vector, 0, "band_power_4_6") > 0.1


def test_feature_vector_has_fixed_length(service):
    vectors = service.featurize_many(toy_windows(4))
    assert vectors.shape == (4, 7 * 3 + 3 * 120)
    assert feature_layout(120)["length"] == vectors.shape[1]


def test_identical_samples_give_identical_vectors(service):
    window = toy_windows(1)[0]
    np.testing.assert_array_equal(service.featurize_flat(window), service.featurize_flat(window))


def test_random_forest_fits_separable_windows(service, toy_set):
    model = service.train_baseline("rf", toy_set, seed=0)
    preds = service.predict_baseline(model, toy_set)
    assert np.mean(preds == np.array([w.label for w in toy_set])) == 1.0


def test_random_forest_recalls_training_exemplar(service, toy_set):
    model = service.train_baseline("rf", toy_set, seed=0)
    exemplar = next(w for w in toy_set if w.label == 1)
    assert service.predict_baseline(model, [exemplar]).tolist() == [1]


@pytest.mark.parametrize("kind", ["svm", "adaboost"])
def test_classical_baselines_learn_toy_set(service, toy_set, kind):
    model = service.train_baseline(kind, toy_set, seed=0)
    preds = service.predict_baseline(model, toy_set)
    assert set(preds.tolist()) <= {0, 1}
    assert np.mean(preds == np.array([w.label for w in toy_set])) >= 0.95


def test_same_seed_gives_same_predictions(service, toy_set):
    held_out = toy_windows(10, seed=7)
    first = service.predict_baseline(service.train_baseline("rf", toy_set, seed=3), held_out)
    second = service.predict_baseline(service.train_baseline("rf", toy_set, seed=3), held_out)
    np.testing.assert_array_equal(first, second)


def test_single_class_training_is_rejected(service, toy_set):
    healthy = [w for w in toy_set if w.label == 0]
    with pytest.raises(BaselineException):
        service.train_baseline("svm", healthy, seed=0)


def test_unknown_kind_is_rejected(service, toy_set):
    with pytest.raises(BaselineException):
        service.train_baseline("knn", toy_set, seed=0)


def test_empty_input_gives_empty_labels(service, toy_set):
    model = service.train_baseline("adaboost", toy_set, seed=0)
    assert service.predict_baseline(model, []).size == 0


def test_feature_length_mismatch_is_rejected(service, toy_set):
    model = service.train_baseline("rf", toy_set, seed=0)
    with pytest.raises(BaselineException):
        service.predict_baseline(model, toy_windows(2, length=60))


def test_cnn_transformer_trains_and_round_trips(service, toy_set, tmp_path):
    model = service.train_baseline("ct", toy_set, seed=0, epochs=3)
    preds = service.predict_baseline(model, toy_set)
    assert preds.shape == (len(toy_set),)

    restored = service.load_baseline(service.save_baseline(model, tmp_path / "ct.safed"))
    np.testing.assert_array_equal(service.predict_baseline(restored, toy_set), preds)


def test_cnn_transformer_rejects_wrong_window_shape(service, toy_set):
    model = service.train_baseline("ct", toy_set, seed=0, epochs=1)
    with pytest.raises(BaselineException):
        service.predict_baseline(model, toy_windows(2, length=60))


def test_classical_baseline_round_trips(service, toy_set, tmp_path):
    model = service.train_baseline("rf", toy_set, seed=1)
    restored = service.load_baseline(service.save_baseline(model, tmp_path / "rf.safed"))

    assert restored.kind == "rf"
    assert restored.seed == 1
    np.testing.assert_array_equal(service.predict_baseline(restored, toy_set), service.predict_baseline(model, toy_set))
