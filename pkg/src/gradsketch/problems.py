"""Convex test problems and dataset plumbing for the training loop.

Three problem families are supported: a diagonal noisy quadratic (closed-form
optimum, used wherever trajectories must be checked exactly), l2-regularized
logistic regression, and a linear SVM with hinge subgradients.  Problems
expose per-sample gradients so a batch can be split across workers with the
worker-mean equal to the batch mean, which is what makes single-node and
multi-node runs comparable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be parsed; carries line context."""


@dataclass
class Dataset:
    """A labeled design matrix.

    Attributes:
        features: (n, d) float64 matrix.
        labels: (n,) int64; -1/+1 for binary tasks, class ids otherwise.
        name: human-readable provenance tag.
        checksum: sha256 over the canonical bytes of features and labels.
    """

    features: np.ndarray
    labels: np.ndarray
    name: str
    checksum: str = field(default="")

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError("features must be (n, d) with one label per row")
        if not self.checksum:
            self.checksum = _checksum(self.features, self.labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def binarize(self, positive_class: int) -> "Dataset":
        """One-vs-all reduction: ``positive_class`` maps to +1, the rest to -1."""
        labels = np.where(self.labels == positive_class, 1, -1).astype(np.int64)
        return Dataset(self.features, labels, f"{self.name}|1v.all({positive_class})")


def _checksum(features: np.ndarray, labels: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(features.shape, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(features, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(labels, dtype="<i8").tobytes())
    return h.hexdigest()


def synth_data(n: int, d: int, class_separation: float, seed: int) -> Dataset:
    """Two isotropic Gaussian blobs with means ``class_separation`` apart.

    Labels are balanced (+1 gets the extra sample when n is odd) and rows are
    shuffled, all deterministically in ``seed``.  Separation 0 makes the
    classes indistinguishable.
    """
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if class_separation < 0:
        raise ValueError("class separation must be nonnegative")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    n_pos = (n + 1) // 2
    labels = np.concatenate([np.ones(n_pos, dtype=np.int64), -np.ones(n - n_pos, dtype=np.int64)])
    features = rng.standard_normal((n, d)) + np.outer(labels, 0.5 * class_separation * direction)
    perm = rng.permutation(n)
    return Dataset(features[perm], labels[perm], f"blobs(n={n},d={d},sep={class_separation:g},seed={seed})")


def split_dataset(dataset: Dataset, n_train: int) -> tuple[Dataset, Dataset]:
    """Split one draw into train/test halves that share the distribution."""
    if not 0 < n_train < dataset.n:
        raise ValueError(f"n_train must be in (0, {dataset.n}), got {n_train}")
    train = Dataset(dataset.features[:n_train], dataset.labels[:n_train], f"{dataset.name}|train")
    test = Dataset(dataset.features[n_train:], dataset.labels[n_train:], f"{dataset.name}|test")
    return train, test


def load_dataset(path: str) -> Dataset:
    """Parse a whitespace-separated text dataset.

    Grammar: one sample per line; the first token is an integer label and the
    remaining tokens are float features.  Blank lines and lines starting with
    ``#`` are skipped.  Every retained line must have the same number of
    features.  Errors report 1-based line numbers.
    """
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) < 2:
                raise DatasetFormatError(f"{path}:{lineno}: need a label and at least one feature")
            try:
                label = int(tokens[0])
            except ValueError:
                raise DatasetFormatError(f"{path}:{lineno}: label {tokens[0]!r} is not an integer") from None
            try:
                feats = [float(t) for t in tokens[1:]]
            except ValueError:
                raise DatasetFormatError(f"{path}:{lineno}: non-numeric feature token") from None
            if width is None:
                width = len(feats)
            elif len(feats) != width:
                raise DatasetFormatError(
                    f"{path}:{lineno}: row has {len(feats)} features, expected {width}"
                )
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise DatasetFormatError(f"{path}: no samples found")
    return Dataset(np.array(rows), np.array(labels), name=path)


def prepare_features(
    dataset: Dataset,
    normalize: bool = True,
    add_intercept: bool = True,
    bounds: tuple[float, float] | None = None,
) -> Dataset:
    """Scale features into [0, 1] and append a constant-1 intercept column.

    Scaling uses the matrix min/max, or ``bounds`` when given so that held
    out data can reuse the training scale (a degenerate range maps to
    zeros).  Runs that load external data apply this so weights include a
    bias term; the flags are echoed in run metadata.
    """
    X = dataset.features
    if normalize:
        lo, hi = bounds if bounds is not None else (X.min(), X.max())
        X = (X - lo) / (hi - lo) if hi > lo else np.zeros_like(X)
    if add_intercept:
        X = np.hstack([X, np.ones((X.shape[0], 1))])
    return Dataset(X, dataset.labels, f"{dataset.name}|prepared")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(w: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float = 0.0) -> float:
    margins = y * (X @ w)
    # log(1 + exp(-m)) computed stably for both signs of m
    losses = np.logaddexp(0.0, -margins)
    return float(np.mean(losses) + 0.5 * lam * (w @ w))


def logistic_gradient(w: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float = 0.0) -> np.ndarray:
    """Mean batch gradient of l2-regularized logistic loss."""
    margins = y * (X @ w)
    coeff = -y * _sigmoid(-margins)
    return X.T @ coeff / X.shape[0] + lam * w


def hinge_loss(w: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float = 0.0) -> float:
    margins = y * (X @ w)
    return float(np.mean(np.maximum(0.0, 1.0 - margins)) + 0.5 * lam * (w @ w))


def hinge_subgradient(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Mean hinge subgradient, taking the zero branch at the kink.

    Rows with margin strictly below 1 contribute ``-y * x``; rows at or above
    the kink contribute zero.
    """
    margins = y * (X @ w)
    active = margins < 1.0
    if not active.any():
        return np.zeros_like(w)
    coeff = np.where(active, -y.astype(np.float64), 0.0)
    return X.T @ coeff / X.shape[0]


def classification_error(w: np.ndarray, dataset: Dataset) -> float:
    """Fraction of misclassified samples; score 0 counts as the +1 side."""
    pred = np.where(dataset.features @ w >= 0, 1, -1)
    return float(np.mean(pred != dataset.labels))


class QuadraticProblem:
    """Noisy diagonal quadratic ``f(w) = 0.5 w'Aw - b'w`` with known optimum.

    The stochastic dataset is ``n_samples`` virtual samples, sample ``s``
    contributing gradient ``A w - b + noise[s]`` with iid Gaussian noise fixed
    at construction.  The mean per-sample gradient over the whole set is the
    full-objective gradient of the induced empirical objective exactly.
    """

    kind = "quadratic"

    def __init__(self, spectrum: np.ndarray, noise_sigma: float, n_samples: int, seed: int):
        self.spectrum = np.asarray(spectrum, dtype=np.float64)
        if self.spectrum.ndim != 1 or np.any(self.spectrum <= 0):
            raise ValueError("spectrum must be a 1-d array of positive eigenvalues")
        if noise_sigma < 0:
            raise ValueError("noise sigma must be nonnegative")
        rng = np.random.default_rng(seed)
        self.b = rng.standard_normal(self.spectrum.size)
        self.noise = rng.normal(0.0, noise_sigma, size=(n_samples, self.spectrum.size)) if noise_sigma > 0 else np.zeros((n_samples, self.spectrum.size))
        self.noise_sigma = noise_sigma
        self.w_star = self.b / self.spectrum
        self._f_star = self._objective(self.w_star)

    @property
    def d(self) -> int:
        return self.spectrum.size

    @property
    def n_train(self) -> int:
        return self.noise.shape[0]

    def _objective(self, w: np.ndarray) -> float:
        return float(0.5 * (w * self.spectrum) @ w - self.b @ w)

    def initial_point(self, seed: int) -> np.ndarray:
        return np.random.default_rng(seed).standard_normal(self.d)

    def per_sample_gradients(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        return (self.spectrum * w - self.b)[None, :] + self.noise[idx]

    def gradient(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        return self.spectrum * w - self.b + self.noise[idx].mean(axis=0)

    def full_gradient(self, w: np.ndarray) -> np.ndarray:
        return self.spectrum * w - self.b + self.noise.mean(axis=0)

    def train_loss(self, w: np.ndarray) -> float:
        return self._objective(w) + float(self.noise.mean(axis=0) @ w)

    def test_metric(self, w: np.ndarray) -> float:
        """Suboptimality ``f(w) - f(w*)`` of the noiseless objective."""
        return self._objective(w) - self._f_star

    @property
    def smoothness(self) -> float:
        return float(self.spectrum.max())


class _ErmProblem:
    """Shared batching/eval glue for dataset-backed problems."""

    def __init__(self, train: Dataset, test: Dataset, lam: float):
        if lam < 0:
            raise ValueError("regularization strength must be nonnegative")
        if train.d != test.d:
            raise ValueError("train and test dimension mismatch")
        self.train = train
        self.test = test
        self.lam = lam

    @property
    def d(self) -> int:
        return self.train.d

    @property
    def n_train(self) -> int:
        return self.train.n

    def initial_point(self, seed: int) -> np.ndarray:
        del seed  # classifiers start at the origin for reproducibility
        return np.zeros(self.d)

    def gradient(self, w, idx):
        return self.per_sample_gradients(w, idx).mean(axis=0)

    def test_metric(self, w: np.ndarray) -> float:
        return classification_error(w, self.test)


class LogisticProblem(_ErmProblem):
    kind = "logistic"

    def per_sample_gradients(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        X, y = self.train.features[idx], self.train.labels[idx]
        coeff = -y * _sigmoid(-(y * (X @ w)))
        return X * coeff[:, None] + self.lam * w

    def gradient(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        return logistic_gradient(w, self.train.features[idx], self.train.labels[idx], self.lam)

    def full_gradient(self, w: np.ndarray) -> np.ndarray:
        return logistic_gradient(w, self.train.features, self.train.labels, self.lam)

    def train_loss(self, w: np.ndarray) -> float:
        return logistic_loss(w, self.train.features, self.train.labels, self.lam)


class HingeSVMProblem(_ErmProblem):
    kind = "hinge-svm"

    def per_sample_gradients(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        X, y = self.train.features[idx], self.train.labels[idx]
        active = (y * (X @ w)) < 1.0
        coeff = np.where(active, -y.astype(np.float64), 0.0)
        return X * coeff[:, None] + self.lam * w

    def gradient(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        X, y = self.train.features[idx], self.train.labels[idx]
        return hinge_subgradient(w, X, y) + self.lam * w

    def full_gradient(self, w: np.ndarray) -> np.ndarray:
        return hinge_subgradient(w, self.train.features, self.train.labels) + self.lam * w

    def train_loss(self, w: np.ndarray) -> float:
        return hinge_loss(w, self.train.features, self.train.labels, self.lam)
