"""scikit-learn compatible classifier around the dynamic fixed-point trainer."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import trainkit
from .numkit import softmax
from .slicekit import sparsity_report


class BitSliceMLPClassifier(ClassifierMixin, BaseEstimator):
    """Two-layer ReLU MLP trained with quantized weights and an optional sparsity penalty.

    Parameters
    ----------
    hidden_size : int, default=128
    mode : {"none", "l1", "bl1"}, default="none"
        Penalty added to the cross-entropy: none, L1 on the quantized
        weights, or the bit-slice L1 digit-sum penalty.
    alpha : float, default=0.0
        Penalty weight.
    lr : float, default=0.1
    epochs : int, default=10
    batch_size : int, default=64
    n_bits, slice_width : int, default=8, 2
        Weight code width and bits per crossbar slice.
    update : {"shadow", "replace"}, default="shadow"
        Apply the step to the full-precision weight or to its quantized value.
    estimator : {"relaxation", "ste"}, default="relaxation"
        Surrogate gradient of the digit-sum penalty.
    prune_threshold : float or None
        Zero and freeze weights below this magnitude before training.
    warm_start : bool, default=False
        Continue from the previous ``fit`` instead of reinitialising.
    random_state : int, default=0

    Attributes
    ----------
    model_ : MlpModel
    classes_ : ndarray
    history_ : list of EpochRecord
    """

    def __init__(
        self,
        hidden_size=128,
        mode="none",
        alpha=0.0,
        lr=0.1,
        epochs=10,
        batch_size=64,
        n_bits=8,
        slice_width=2,
        update="shadow",
        estimator="relaxation",
        prune_threshold=None,
        warm_start=False,
        random_state=0,
    ):
        self.hidden_size = hidden_size
        self.mode = mode
        self.alpha = alpha
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_bits = n_bits
        self.slice_width = slice_width
        self.update = update
        self.estimator = estimator
        self.prune_threshold = prune_threshold
        self.warm_start = warm_start
        self.random_state = random_state

    def _config(self):
        return trainkit.TrainingConfig(
            lr=self.lr,
            alpha=self.alpha,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.random_state,
            mode=self.mode,
            hidden=self.hidden_size,
            n_bits=self.n_bits,
            slice_width=self.slice_width,
            update=self.update,
            estimator=self.estimator,
            prune_threshold=self.prune_threshold,
        )

    def fit(self, X, y, eval_set=None):
        """Train on ``(X, y)``; ``eval_set=(X_val, y_val)`` adds per-epoch accuracy to ``history_``."""
        X, y = check_X_y(X, y, dtype=[np.float32, np.float64])
        check_classification_targets(y)
        cfg = self._config()
        warm = self.warm_start and hasattr(self, "model_")
        if warm:
            if not np.array_equal(np.unique(y), self.classes_):
                raise ValueError("warm_start requires the same classes as the previous fit")
            if X.shape[1] != self.n_features_in_:
                raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
            model = self.model_
        else:
            self.classes_ = np.unique(y)
            self.n_features_in_ = X.shape[1]
            model = trainkit.init_mlp((X.shape[1], self.hidden_size, len(self.classes_)), seed=self.random_state, dtype=X.dtype)
        if self.prune_threshold is not None:
            model = trainkit.magnitude_prune(model, self.prune_threshold)
        y_enc = np.searchsorted(self.classes_, y)
        X_val = y_val = None
        if eval_set is not None:
            X_val = check_array(eval_set[0], dtype=model.dtype)
            y_val = np.searchsorted(self.classes_, np.asarray(eval_set[1]))
        self.model_, history = trainkit.train(model, X.astype(model.dtype, copy=False), y_enc, cfg, X_val, y_val)
        self.history_ = (list(self.history_) if warm and hasattr(self, "history_") else []) + history
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=[np.float32, np.float64])
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return trainkit.predict_logits(self.model_, X, self._config().quant_config)

    def predict_proba(self, X):
        return softmax(self.decision_function(X).astype(np.float64))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def quantized_layers(self):
        check_is_fitted(self, "model_")
        return self.model_.quantize(self._config().quant_config)

    def sparsity_report(self, X=None, y=None):
        """Slice sparsity of the fitted weights, with accuracy on ``(X, y)`` if given."""
        acc = self.score(X, y) if X is not None else None
        return sparsity_report(self.quantized_layers(), acc)
