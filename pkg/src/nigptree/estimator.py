"""scikit-learn estimator wrapper around the tree trainer."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .tree import TrainConfig, train


class NIGPTreeClassifier(ClassifierMixin, BaseEstimator):
    """Multi-class GP classifier over a balanced tree of binary PG nodes.

    Parameters mirror ``TrainConfig`` except ``denoiser``, which defaults to
    ``"none"``: SVD thresholding needs many feature columns, and generic
    tabular inputs rarely have them. Labels may be any hashable values;
    they are mapped onto ``0..C-1`` in sorted order (``classes_``).
    After ``fit``, ``sigma_x_`` holds the estimated input-noise variances
    and predictions apply the noisy-input correction when ``noisy`` is set.
    """

    def __init__(self, epochs=20, learning_rate=0.1, n_inducing=2, kernel="rbf", alpha=1.5,
                 lengthscale=None, output_scale=1.0, ard=False, noisy=True, denoiser="none",
                 train_on_denoised=True, sweeps_per_epoch=5, seed=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.n_inducing = n_inducing
        self.kernel = kernel
        self.alpha = alpha
        self.lengthscale = lengthscale
        self.output_scale = output_scale
        self.ard = ard
        self.noisy = noisy
        self.denoiser = denoiser
        self.train_on_denoised = train_on_denoised
        self.sweeps_per_epoch = sweeps_per_epoch
        self.seed = seed

    def _config(self):
        return TrainConfig(**self.get_params()).validate()

    def fit(self, X, y, groups=None):
        """``groups`` gives per-row sequence ids for the sequence-aware denoiser."""
        X, y = check_X_y(X, y)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError(f"need at least two classes; got {self.classes_.size} class")
        result = train(X, codes, self._config(), groups=groups)
        self.tree_ = result.tree
        self.sigma_x_ = result.sigma_x
        self.elbo_history_ = result.elbo_history
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "tree_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} "
                f"is expecting {self.n_features_in_} features as input")
        return self.tree_.class_probabilities(X, noise=self.tree_.noise)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
