"""
Sample-quality scores: an Inception-style score over a small trained label
model, and the Generate Score (normalised deviation of the final split's IS).
"""
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import softmax
from sklearn.exceptions import ConvergenceWarning
from sklearn.model_selection import train_test_split
from sklearn.neural_network import MLPClassifier

from .config import PPGANConfig
from .errors import DataFormatError, LabelModelError, ParameterError, ShapeError
from .mlp import MlpParams, forward
from .models import Checkpoint, ScoreReport
from .ndnum import Matrix, RngStream, as_matrix, sample_gaussian_matrix, sample_seed
from .training import params_from_checkpoint
from .utils import write_csv

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12
SCORES_HEADER = ["eps", "seed", "is_mean", "is_std", "gs"]
MIN_LABEL_ACCURACY = 0.9


@dataclass
class LabelModel:
    """Softmax classifier standing in for the conditional label model p(y|x)."""
    classifier: MlpParams
    classes: np.ndarray
    accuracy: float = math.nan

    @property
    def k(self) -> int:
        return int(self.classes.size)

    def __post_init__(self):
        self.classes = np.asarray(self.classes)
        if self.classifier.output_dim != self.classes.size:
            raise ShapeError(f"classifier has {self.classifier.output_dim} outputs "
                             f"for {self.classes.size} classes")


def predict_proba(model: LabelModel, samples: Matrix) -> np.ndarray:
    """Row-wise softmax of the classifier logits."""
    return softmax(forward(model.classifier, samples), axis=1)


def _to_mlp_params(clf: MLPClassifier) -> MlpParams:
    """sklearn weights as MlpParams; the binary logistic head becomes a 2-way softmax."""
    layers = [(w.astype(np.float64), b.astype(np.float64))
              for w, b in zip(clf.coefs_, clf.intercepts_)]
    if len(clf.classes_) == 2:
        w, b = layers[-1]
        layers[-1] = (np.hstack([np.zeros_like(w), w]), np.concatenate([np.zeros_like(b), b]))
    activations = [clf.activation] * (len(layers) - 1) + ['linear']
    return MlpParams(layers, activations)


def label_accuracy(model: LabelModel, samples: Matrix, labels) -> float:
    predicted = model.classes[np.argmax(predict_proba(model, samples), axis=1)]
    return float(np.mean(predicted == np.asarray(labels)))


def train_label_model(real_images: Matrix, labels, epochs: int = 300, rng: Optional[RngStream] = None,
                      hidden_dim: int = 64, holdout: float = 0.2,
                      min_accuracy: float = MIN_LABEL_ACCURACY) -> LabelModel:
    """
    Fit the evaluation classifier on real labelled data.

    Args:
        real_images: one example per row
        labels: class label per row
        epochs: maximum optimiser iterations
        rng: source of the split / initialisation seed
        hidden_dim: width of the single relu hidden layer
        holdout: fraction kept aside for the accuracy gate
        min_accuracy: required held-out accuracy

    Raises:
        LabelModelError: held-out accuracy below `min_accuracy`
    """
    real_images = as_matrix(real_images)
    labels = np.asarray(labels)
    if real_images.shape[0] != labels.shape[0]:
        raise ShapeError(f"{real_images.shape[0]} images but {labels.shape[0]} labels")
    seed = sample_seed(rng or RngStream(0, PPGANConfig.STREAM_EVAL))

    _, counts = np.unique(labels, return_counts=True)
    stratify = labels if counts.min() >= 2 else None
    x_train, x_test, y_train, y_test = train_test_split(
        real_images, labels, test_size=holdout, random_state=seed, stratify=stratify)

    clf = MLPClassifier(hidden_layer_sizes=(hidden_dim,), activation='relu',
                        max_iter=epochs, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit(x_train, y_train)

    model = LabelModel(_to_mlp_params(clf), clf.classes_)
    model.accuracy = label_accuracy(model, x_test, y_test)
    logger.info(f"Label model: {model.k} classes, held-out accuracy {model.accuracy:.3f} "
                f"({len(y_test)} examples)")
    if model.accuracy < min_accuracy:
        raise LabelModelError(f"label model reached {model.accuracy:.3f} held-out accuracy "
                              f"(< {min_accuracy}); train for more epochs")
    return model


def inception_scores_from_probs(probs: np.ndarray, splits: int) -> List[float]:
    """IS per split from precomputed class probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    n, k = probs.shape
    if n == 0:
        raise ParameterError("need at least one sample")
    if splits < 1 or n % splits:
        raise ParameterError(f"splits={splits} must be >= 1 and divide {n} samples")

    part = n // splits
    scores = []
    for i in range(splits):
        p_yx = probs[i * part:(i + 1) * part]
        p_y = p_yx.mean(axis=0, keepdims=True)
        kl = p_yx * (np.log(np.maximum(p_yx, PROBABILITY_FLOOR))
                     - np.log(np.maximum(p_y, PROBABILITY_FLOOR)))
        value = math.exp(float(np.mean(kl.sum(axis=1))))
        scores.append(min(max(value, 1.0), float(k)))
    return scores


def inception_score(samples: Matrix, model: LabelModel, splits: int) -> List[float]:
    """exp(mean KL(p(y|x) || p(y))) per equal-sized split, in [1, k]."""
    return inception_scores_from_probs(predict_proba(model, samples), splits)


def generate_score(is_values: Sequence[float]) -> float:
    """
    |IS_final - mean(IS)| / (max(IS) - min(IS)) over one run's split scores.

    0 when every value is equal.
    """
    values = np.asarray(is_values, dtype=np.float64)
    if values.size < 2:
        raise ParameterError(f"generate score needs >= 2 values, got {values.size}")
    spread = float(values.max() - values.min())
    if spread == 0:
        return 0.0
    return min(1.0, abs(float(values[-1]) - float(values.mean())) / spread)


def score_samples(samples: Matrix, model: LabelModel, splits: int,
                  epsilon_label: float, seed: int = 0) -> ScoreReport:
    is_values = inception_score(samples, model, splits)
    return ScoreReport(is_values=is_values, gs=generate_score(is_values),
                       epsilon_label=epsilon_label, seed=seed)


def sample_generator(checkpoint: Checkpoint, n: int, rng: RngStream) -> Matrix:
    """n generator outputs from latent draws of `rng`."""
    theta, _, _ = params_from_checkpoint(checkpoint)
    z = sample_gaussian_matrix(rng, n, theta.input_dim)
    return forward(theta, z)


def score_run(checkpoint: Checkpoint, model: LabelModel, n_samples: int, splits: int,
              rng: RngStream) -> ScoreReport:
    """IS per split and GS of a checkpoint's generator, labelled with its run epsilon."""
    _, _, config = params_from_checkpoint(checkpoint)
    samples = sample_generator(checkpoint, n_samples, rng)
    report = score_samples(samples, model, splits, config.epsilon, config.seed)
    logger.info(f"Scored iteration {checkpoint.iteration} (eps={config.epsilon:g}): "
                f"IS {report.is_mean:.3f} ± {report.is_std:.3f}, GS {report.gs:.3f}")
    return report


def append_scores(path, reports: Sequence[ScoreReport]):
    write_csv(path, SCORES_HEADER, (r.csv_row() for r in reports), append=True)


def save_label_model(model: LabelModel, path) -> Path:
    path = Path(path)
    arrays = {}
    for i, (weight, bias) in enumerate(model.classifier.layers):
        arrays[f"W{i}"] = weight
        arrays[f"b{i}"] = bias
    with open(path, 'wb') as f:
        np.savez(f, activations=np.array(model.classifier.activations), classes=model.classes,
                 accuracy=np.array(model.accuracy), **arrays)
    logger.info(f"💾 Label model saved: {path}")
    return path


def load_label_model(path) -> LabelModel:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"label model not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        activations = [str(a) for a in data["activations"]]
        layers = [(data[f"W{i}"].copy(), data[f"b{i}"].copy()) for i in range(len(activations))]
        return LabelModel(MlpParams(layers, activations), data["classes"].copy(),
                          float(data["accuracy"]))
