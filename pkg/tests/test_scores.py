import math

import numpy as np
import pytest

from ppgan.data_io import load_digits_dataset
from ppgan.errors import LabelModelError, ParameterError, ShapeError
from ppgan.mlp import MlpParams
from ppgan.ndnum import RngStream
from ppgan.scores import (SCORES_HEADER, LabelModel, append_scores, generate_score,
                          inception_score, inception_scores_from_probs, load_label_model,
                          predict_proba, sample_generator, save_label_model, score_run,
                          score_samples, train_label_model)
from ppgan.training import train
from ppgan.utils import read_csv


def _clusters(n_per_class=60, dim=2, classes=2, seed=0):
    gen = np.random.default_rng(seed)
    centres = np.eye(classes, dim) * 3.0
    x = np.concatenate([gen.normal(c, 0.3, size=(n_per_class, dim)) for c in centres])
    y = np.repeat(np.arange(classes), n_per_class)
    return x, y


@pytest.fixture(scope="module")
def toy_model():
    x, y = _clusters(dim=4, classes=3)
    return train_label_model(x, y, epochs=1000, rng=RngStream(1, 3), hidden_dim=8)


def _naive_is(probs):
    n, k = probs.shape
    marginal = [sum(probs[i][j] for i in range(n)) / n for j in range(k)]
    total = 0.0
    for i in range(n):
        for j in range(k):
            p = max(probs[i][j], 1e-12)
            total += probs[i][j] * (math.log(p) - math.log(max(marginal[j], 1e-12)))
    return math.exp(total / n)


def test_uniform_predictions_score_one():
    assert inception_scores_from_probs(np.full((10, 4), 0.25), 2) == [1.0, 1.0]


def test_confident_balanced_predictions_score_k():
    [score] = inception_scores_from_probs(np.eye(10), 1)
    assert score == pytest.approx(10.0)
    assert score <= 10.0


def test_matches_naive_kl():
    probs = np.random.default_rng(2).dirichlet(np.ones(5), size=12)
    scores = inception_scores_from_probs(probs, 3)
    for i, score in enumerate(scores):
        assert score == pytest.approx(_naive_is(probs[4 * i:4 * i + 4]), abs=1e-10)


def test_single_sample_splits_score_one():
    probs = np.random.default_rng(3).dirichlet(np.ones(3), size=3)
    assert inception_scores_from_probs(probs, 3) == pytest.approx([1.0, 1.0, 1.0])


@pytest.mark.parametrize("splits", [0, 3, 7])
def test_splits_must_divide(splits):
    with pytest.raises(ParameterError):
        inception_scores_from_probs(np.full((10, 2), 0.5), splits)


def test_generate_score_examples():
    assert generate_score([2.0, 2.0, 2.0]) == 0.0
    assert generate_score([1.0, 3.0]) == 0.5
    values = np.random.default_rng(1).uniform(1, 10, size=10)
    assert 0.0 <= generate_score(values) <= 1.0


def test_generate_score_needs_two_values():
    with pytest.raises(ParameterError):
        generate_score([3.0])


def test_label_model_separates_toy_clusters(toy_model):
    x, y = _clusters(dim=4, classes=3, seed=9)
    predicted = toy_model.classes[np.argmax(predict_proba(toy_model, x), axis=1)]
    assert toy_model.accuracy >= 0.95
    assert np.mean(predicted == y) >= 0.95
    np.testing.assert_allclose(predict_proba(toy_model, x).sum(axis=1), 1.0)


def test_label_model_is_deterministic():
    x, y = _clusters()
    a = train_label_model(x, y, epochs=1000, rng=RngStream(4, 3), hidden_dim=8)
    b = train_label_model(x, y, epochs=1000, rng=RngStream(4, 3), hidden_dim=8)
    for (wa, ba), (wb, bb) in zip(a.classifier.layers, b.classifier.layers):
        assert np.array_equal(wa, wb) and np.array_equal(ba, bb)


def test_binary_head_becomes_two_way_softmax():
    x, y = _clusters()
    model = train_label_model(x, y, epochs=1000, rng=RngStream(4, 3), hidden_dim=8)
    assert model.k == 2
    assert predict_proba(model, x).shape == (x.shape[0], 2)
    assert model.accuracy >= 0.95


def test_accuracy_gate():
    gen = np.random.default_rng(0)
    x, y = gen.normal(size=(200, 4)), gen.integers(0, 3, size=200)
    with pytest.raises(LabelModelError):
        train_label_model(x, y, epochs=20, rng=RngStream(1, 3), min_accuracy=0.99)


def test_label_count_mismatch():
    with pytest.raises(ShapeError):
        train_label_model(np.zeros((4, 2)), [0, 1, 0])


def test_classifier_output_must_match_classes():
    params = MlpParams([(np.zeros((2, 3)), np.zeros(3))], ['linear'])
    with pytest.raises(ShapeError):
        LabelModel(params, np.arange(2))


def test_digits_label_model_passes_gate():
    data, labels = load_digits_dataset()
    model = train_label_model(data, labels, rng=RngStream(1, 3))
    assert model.accuracy >= 0.9
    report = score_samples(data[:1790], model, 10, math.inf)
    assert all(1.0 <= v <= 10.0 for v in report.is_values)
    assert report.is_mean > 5.0


def test_save_and_load_label_model(toy_model, tmp_path):
    path = save_label_model(toy_model, tmp_path / "label.npz")
    restored = load_label_model(path)
    x, _ = _clusters(dim=4, classes=3, seed=5)
    assert np.array_equal(predict_proba(restored, x), predict_proba(toy_model, x))
    assert np.array_equal(restored.classes, toy_model.classes)
    assert restored.accuracy == toy_model.accuracy


def test_score_run_is_deterministic(toy_model, tiny_config, tiny_dataset):
    checkpoint = train(tiny_config, tiny_dataset).checkpoint
    a = score_run(checkpoint, toy_model, 40, 4, RngStream(1, 3))
    b = score_run(checkpoint, toy_model, 40, 4, RngStream(1, 3))
    assert a.is_values == b.is_values and a.gs == b.gs
    assert a.epsilon_label == tiny_config.epsilon
    assert a.seed == tiny_config.seed
    assert len(a.is_values) == 4


def test_sample_generator_shape(tiny_config, tiny_dataset):
    checkpoint = train(tiny_config, tiny_dataset).checkpoint
    samples = sample_generator(checkpoint, 7, RngStream(2, 3))
    assert samples.shape == (7, 4)
    assert np.all(np.abs(samples) <= 1.0)


def test_append_scores(toy_model, tmp_path):
    x, _ = _clusters(dim=4, classes=3)
    path = tmp_path / "scores.csv"
    append_scores(path, [score_samples(x, toy_model, 2, math.inf, 1)])
    append_scores(path, [score_samples(x, toy_model, 3, 5.0, 2)])
    rows = read_csv(path)
    assert rows[0] == SCORES_HEADER
    assert rows[1][0] == "inf" and rows[2][0] == "5.0"
    assert [r[1] for r in rows[1:]] == ["1", "2"]


def test_inception_score_on_model(toy_model):
    x, _ = _clusters(dim=4, classes=3)
    scores = inception_score(x, toy_model, 3)
    # each split is one pure class
    assert scores == pytest.approx([1.0, 1.0, 1.0], abs=0.1)
