"""scikit-learn style estimators wrapping the SVR pipeline and the MLP trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, check_X_y

from ._validation import check_inputs, check_model, check_probability
from .dims import internal_dims
from .flow import spectral_activations
from .spectra import build_svr, threshold_edges
from .trainer import TrainConfig, mlp_logits, to_model, train_weights


class SingularValueRepresentation(TransformerMixin, BaseEstimator):
    """SVR graph of a network, fitted on its weights.

    Parameters
    ----------
    p : float, default=0.15
        Null survival fraction used to threshold edges.
    layer : int, default=0
        Layer whose spectral activations ``transform`` returns.
    threads : int, default=1
        Worker threads for the per-layer SVDs.

    Attributes
    ----------
    graph_ : SvrGraph
    internal_dims_ : list of InternalDims, one per adjacency
    thresholds_ : ndarray of shape (n_adjacencies,)
    edges_ : list of edge lists ``(row, col, weight)``
    """

    def __init__(self, p=0.15, layer=0, threads=1):
        self.p = p
        self.layer = layer
        self.threads = threads

    def fit(self, X, y=None):
        """Build the graph. ``X`` is a list of weight tensors or a ``(ModelSpec, WeightStore)`` pair."""
        p = check_probability(self.p)
        self.spec_, self.store_ = check_model(X)
        self.graph_ = build_svr(self.spec_, self.store_, threads=self.threads)
        adjs = self.graph_.adjacencies
        self.internal_dims_ = [internal_dims(a.values, a.n_null) for a in adjs]
        self.thresholds_ = np.array([a.null_model.threshold(p) for a in adjs])
        self.edges_ = [threshold_edges(a, p) for a in adjs]
        self.n_layers_ = self.graph_.n_layers
        return self

    def transform(self, X):
        """Spectral activations of ``layer`` for a batch of inputs, flattened per sample."""
        check_is_fitted(self, "graph_")
        X = check_inputs(X, self.spec_)
        if not 0 <= self.layer < self.n_layers_:
            raise ValueError(f"layer must lie in [0, {self.n_layers_}), got {self.layer}")
        Y = spectral_activations(self.spec_, self.store_, X, list(self.graph_.factors))[self.layer]
        return Y.reshape(Y.shape[0], -1)

    def adjacency(self, k):
        check_is_fitted(self, "graph_")
        return self.graph_.adjacencies[k].values


class BiasFreeMLPClassifier(ClassifierMixin, BaseEstimator):
    """Bias-free ReLU MLP trained with plain mini-batch SGD on softmax cross-entropy.

    Parameters
    ----------
    hidden : tuple of int, default=(40, 40, 40)
    epochs : int, default=5
    lr : float, default=0.05
    batch_size : int, default=64
    random_state : int, default=0
    subset : int or None, default=None
        Train on a random subset of this many samples.
    """

    def __init__(self, hidden=(40, 40, 40), epochs=5, lr=0.05, batch_size=64, random_state=0, subset=None):
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.random_state = random_state
        self.subset = subset

    def fit(self, X, y):
        X, y = check_X_y(np.asarray(X).reshape(len(X), -1), y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        widths = (X.shape[1], *self.hidden, len(self.classes_))
        config = TrainConfig(widths, self.epochs, self.lr, self.batch_size, self.random_state, self.subset)
        self.history_ = []
        self.coefs_ = train_weights(config, X, codes, log=self.history_)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coefs_")
        X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return mlp_logits(self.coefs_, X)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def to_model(self):
        """``(ModelSpec, WeightStore)`` of the fitted network."""
        check_is_fitted(self, "coefs_")
        return to_model(self.coefs_)
