"""scikit-learn front end for the hashing network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .codes import CodeIndex, binarize_rows
from .config import TrainConfig
from .dataio import EmbeddingDataset, SplitManifest
from .evaluation import mean_average_precision, relaxed_codes
from .trainer import train


def _as_multi_hot(y) -> tuple[np.ndarray, np.ndarray | None]:
    y = np.asarray(y)
    if y.ndim == 1:
        classes, inverse = np.unique(y, return_inverse=True)
        onehot = np.zeros((len(y), len(classes)), dtype=bool)
        onehot[np.arange(len(y)), inverse] = True
        return onehot, classes
    if not np.isin(y, (0, 1)).all():
        raise ValueError("2-D y must be a 0/1 multi-hot matrix")
    if not y.any(axis=1).all():
        raise ValueError("every sample needs at least one label")
    return y.astype(bool), None


class MultiModalHasher(TransformerMixin, BaseEstimator):
    """Learn k-bit codes from concatenated ``[vision | text]`` features.

    Parameters
    ----------
    code_bits : int, default=64
        Code length k (multiple of 8 in [8, 256]).
    batch_size : int, default=128
    lam : float, default=0.5
        Window fraction of the batch; ``lam * batch_size`` must be whole.
    delta : float, default=1.0
        Weight of the softplus term of the pairwise loss.
    mu : float, default=0.01
        Weight of the quantization loss.
    learning_rate : float, default=0.03
    epochs : int, default=50
    random_state : int, default=0
    vision_dim : int or None, default=None
        Width of the vision block of ``X``; ``None`` splits ``X`` in half.
    variant : {"full", "concat_only", "vision_only", "text_only"}, default="full"

    Attributes
    ----------
    params_ : ModelParams
    log_ : TrainLog
    config_ : TrainConfig
    classes_ : ndarray or None
        Class values when ``y`` was given as a 1-D label vector.
    """

    def __init__(self, code_bits=64, batch_size=128, lam=0.5, delta=1.0, mu=0.01,
                 learning_rate=0.03, epochs=50, random_state=0, vision_dim=None, variant="full"):
        self.code_bits = code_bits
        self.batch_size = batch_size
        self.lam = lam
        self.delta = delta
        self.mu = mu
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.random_state = random_state
        self.vision_dim = vision_dim
        self.variant = variant

    def _split(self, X):
        d_v = self.config_.vision_dim
        return X[:, :d_v], X[:, d_v:]

    def _make_config(self, n_features: int) -> TrainConfig:
        d_v = n_features // 2 if self.vision_dim is None else self.vision_dim
        if not 0 < d_v < n_features:
            raise ValueError(f"vision_dim={d_v} leaves no room for text in {n_features} features")
        return TrainConfig().replace(
            code_bits=self.code_bits, batch_size=self.batch_size, lam=float(self.lam),
            delta=float(self.delta), mu=float(self.mu), learning_rate=float(self.learning_rate),
            epochs=self.epochs, seed=int(self.random_state or 0), vision_dim=d_v,
            text_dim=n_features - d_v, variant=self.variant,
        )

    def fit(self, X, y):
        """Train on all rows of ``X``; ``y`` is 1-D classes or a multi-hot matrix."""
        X, y = check_X_y(X, y, multi_output=True, dtype=np.float64)
        labels, self.classes_ = _as_multi_hot(y)
        self.config_ = self._make_config(X.shape[1])
        self.n_features_in_ = X.shape[1]
        vision, text = self._split(X)
        manifest = SplitManifest(np.arange(len(X)), [], [])
        self.params_, self.log_ = train(EmbeddingDataset(vision, text, labels, manifest), self.config_)
        return self

    def transform(self, X):
        """Relaxed codes in (-1, 1), shape ``(n_samples, code_bits)``."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        vision, text = self._split(X)
        return relaxed_codes(self.params_, vision, text, self.config_.variant)

    def encode(self, X) -> np.ndarray:
        """Bit-packed binary codes, ``(n_samples, ceil(code_bits / 64))`` uint64."""
        return binarize_rows(self.transform(X))

    def score(self, X_query, y_query, X_db=None, y_db=None) -> float:
        """mAP of the queries ranked against a database (``X_query`` itself if omitted)."""
        if X_db is None:
            X_db, y_db = X_query, y_query
        q_lab, _ = _as_multi_hot(y_query)
        db_lab, _ = _as_multi_hot(y_db)
        if self.classes_ is not None and np.ndim(y_query) == 1:
            q_lab = np.asarray(y_query)[:, None] == self.classes_[None, :]
            db_lab = np.asarray(y_db)[:, None] == self.classes_[None, :]
        k = self.config_.code_bits
        queries = CodeIndex(np.arange(len(X_query)), self.encode(X_query), k)
        db = CodeIndex(np.arange(len(X_db)), self.encode(X_db), k)
        return mean_average_precision(queries, q_lab, db, db_lab).map
