import numpy as np
import pytest

from matobf.dataset import LabeledDataset, generate_synthetic
from matobf.errors import ConfigError, FormatError
from matobf.probe import (
    LinearClassifier,
    TrainConfig,
    decode_classifier,
    encode_classifier,
    evaluate,
    load_classifier,
    predict,
    save_classifier,
    train_classifier,
)


def toy(n, seed):
    """Two pixels; class is whichever is brighter, with a clear margin."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    hi, lo = rng.uniform(0.7, 1.0, n), rng.uniform(0.0, 0.3, n)
    px = np.where(labels[:, None] == 0, np.c_[hi, lo], np.c_[lo, hi])
    return LabeledDataset(px.reshape(n, 1, 2), labels)


def test_separable_toy_reaches_full_accuracy():
    clf = train_classifier(toy(40, 0), toy(10, 1), TrainConfig(epochs=50, batch_size=8))
    acc, confusion = evaluate(clf, toy(100, 2))
    assert acc == 1.0
    assert confusion.tolist() == [[50, 0], [0, 50]]


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=10, seed=3)
    a = train_classifier(toy(40, 0), toy(10, 1), cfg)
    b = train_classifier(toy(40, 0), toy(10, 1), cfg)
    assert encode_classifier(a) == encode_classifier(b)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    single = LabeledDataset(np.zeros((4, 1, 2)), np.zeros(4, dtype=np.int64))
    with pytest.raises(ConfigError):
        train_classifier(single, single)


def test_always_zero_classifier_on_balanced_set():
    clf = LinearClassifier(np.zeros((2, 2)), np.array([1.0, 0.0]))
    acc, confusion = evaluate(clf, toy(20, 3))
    assert acc == 0.5
    assert confusion[:, 1].sum() == 0


def test_zero_weights_tie_breaks_to_lowest_class():
    clf = LinearClassifier(np.zeros((3, 2)), np.zeros(3))
    assert predict(clf, np.array([[0.3, 0.9]])) == 0


def test_predict_agrees_with_evaluate():
    clf = train_classifier(toy(40, 0), toy(10, 1), TrainConfig(epochs=5))
    test = toy(30, 4)
    acc, _ = evaluate(clf, test)
    manual = np.mean([predict(clf, im) == y for im, y in zip(test.images, test.labels)])
    assert acc == manual


def test_predictions_invariant_to_positive_logit_scaling():
    clf = train_classifier(toy(40, 0), toy(10, 1), TrainConfig(epochs=5))
    scaled = LinearClassifier(clf.weights * 3.0, clf.bias * 3.0)
    test = toy(30, 5)
    assert [predict(clf, im) for im in test.images] == [predict(scaled, im) for im in test.images]


def test_loss_history_trends_down():
    train = generate_synthetic(30, 12, 12, 0.05, seed=6)
    val = generate_synthetic(5, 12, 12, 0.05, seed=7)
    history = []
    train_classifier(train, val, TrainConfig(epochs=30, learning_rate=0.01, l2=0.0), history)
    losses = [h["loss"] for h in history]
    assert len(losses) == 31
    increases = sum(b > a for a, b in zip(losses, losses[1:]))
    assert increases <= 2
    assert losses[-1] < losses[0]


def test_best_validation_epoch_is_kept():
    history = []
    clf = train_classifier(toy(40, 0), toy(10, 1), TrainConfig(epochs=20), history)
    acc, _ = evaluate(clf, toy(10, 1))
    assert acc == max(h["val_accuracy"] for h in history)


def test_classifier_file_round_trip(tmp_path):
    clf = train_classifier(toy(40, 0), toy(10, 1), TrainConfig(epochs=3))
    path = tmp_path / "m.clf1"
    save_classifier(clf, path)
    data = path.read_bytes()
    assert data[:4] == b"CLF1" and len(data) == 12 + 8 * (2 * 2 + 2)
    back = load_classifier(path)
    assert back.weights.tobytes() == clf.weights.tobytes()
    assert back.bias.tobytes() == clf.bias.tobytes()
    with pytest.raises(FormatError):
        decode_classifier(data[:-1])
    with pytest.raises(FormatError):
        decode_classifier(b"CLF2" + data[4:])
