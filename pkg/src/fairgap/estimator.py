"""scikit-learn compatible classifier wrapping the from-scratch models."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import __version__
from .mitigation import EPSILON, MitigationConfig
from .models import (
    ModelSpec,
    TrainConfig,
    forward,
    state_from_dict,
    state_to_dict,
    train,
)
from .tabular import fit_standardizer

__all__ = ["FairClassifier"]


class FairClassifier(ClassifierMixin, BaseEstimator):
    """Binary classifier trained on a correlation-regularized cross-entropy.

    Parameters
    ----------
    model : {"blr", "mlp"}, default="mlp"
        Logistic regression or a ReLU feed-forward network.
    hidden_layers, hidden_width : int, default=3, 200
        Network depth and width (ignored for ``"blr"``).
    dropout_rate : float, default=0.01
        Inverted-dropout rate after every hidden ReLU layer.
    init : {"xavier_uniform", "he_normal"}, default="xavier_uniform"
    lam : float in [0, 1], default=0.0
        Weight of the absolute-correlation penalty; 0 trains on plain
        cross-entropy.
    target_class : {0, 1}, default=1
        Label class the penalty conditions on. 1 targets the FNR gap, 0 the
        FPR gap.
    weighted : bool, default=False
        Use sample weights in both the cross-entropy and the penalty.
    reduction : {"mean", "sum"}, default="mean"
        Normalization of the unweighted cross-entropy.
    batch_size, step_size, epochs : SGD settings.
    select_on : {"total", "primary"}, default="total"
        Loss used to pick the best epoch.
    standardize : bool, default=False
        Z-score features with statistics of the training data.
    protected_index : int, optional
        Column of ``X`` holding the protected group; used when ``fit`` gets
        no explicit ``protected`` array.
    threshold : float, default=0.5
        Probability cut-off for :meth:`predict`.
    dtype : str, default="float32"
        Working precision of training and inference.
    random_state : int or sequence of int, default=0
        Seed for initialization, shuffling and dropout.
    mitigate : bool, default=True
        ``False`` bypasses the mitigation module and trains on plain
        cross-entropy (``lam`` is then ignored).

    Attributes
    ----------
    state_ : ModelState
        Parameters of the selected epoch.
    trace_ : list of dict
        Per-epoch ``primary_loss``, ``fairness_loss`` and ``total_loss``.
    best_epoch_ : int
    """

    def __init__(
        self,
        model="mlp",
        hidden_layers=3,
        hidden_width=200,
        dropout_rate=0.01,
        init="xavier_uniform",
        lam=0.0,
        target_class=1,
        weighted=False,
        reduction="mean",
        epsilon=EPSILON,
        batch_size=1000,
        step_size=0.1,
        epochs=50,
        select_on="total",
        standardize=False,
        protected_index=None,
        threshold=0.5,
        dtype="float32",
        random_state=0,
        mitigate=True,
    ):
        self.model = model
        self.hidden_layers = hidden_layers
        self.hidden_width = hidden_width
        self.dropout_rate = dropout_rate
        self.init = init
        self.lam = lam
        self.target_class = target_class
        self.weighted = weighted
        self.reduction = reduction
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.step_size = step_size
        self.epochs = epochs
        self.select_on = select_on
        self.standardize = standardize
        self.protected_index = protected_index
        self.threshold = threshold
        self.dtype = dtype
        self.random_state = random_state
        self.mitigate = mitigate

    def _model_spec(self) -> ModelSpec:
        return ModelSpec(
            kind=self.model,
            hidden_layers=self.hidden_layers,
            hidden_width=self.hidden_width,
            dropout_rate=self.dropout_rate,
            init=self.init,
        )

    def _mitigation(self) -> MitigationConfig:
        return MitigationConfig(
            lam=self.lam, q=self.target_class, epsilon=self.epsilon, weighted=self.weighted, reduction=self.reduction
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            step_size=self.step_size,
            epochs=self.epochs,
            seed=self.random_state,
            select_on=self.select_on,
            dtype=self.dtype,
        )

    def _protected(self, X, protected):
        if protected is not None:
            z = np.asarray(protected)
            if z.shape != (X.shape[0],):
                raise ValueError(f"protected has shape {z.shape}, expected ({X.shape[0]},)")
        elif self.protected_index is not None:
            z = X[:, self.protected_index]
        elif self.lam > 0 and self.mitigate:
            raise ValueError("lam > 0 needs a protected attribute: pass protected= or set protected_index")
        else:
            return np.zeros(X.shape[0], dtype=np.int64)
        if not np.isin(z, (0, 1)).all():
            raise ValueError("protected attribute must be binary 0/1")
        return z.astype(np.int64)

    def _scale(self, X):
        if self.mean_ is None:
            return X
        return (X - self.mean_) / self.scale_

    def fit(self, X, y, protected=None, sample_weight=None, validation=None):
        """Train on ``X, y``.

        ``validation`` is an optional ``(X, y, protected, sample_weight)`` tuple
        whose losses are added to :attr:`trace_` as ``test_*`` columns.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        if not np.isin(y, (0, 1)).all():
            raise ValueError("y must be binary with labels 0 and 1")
        y = y.astype(np.int64)
        z = self._protected(X, protected)
        if sample_weight is not None:
            sample_weight = np.asarray(sample_weight, dtype=float)
            if sample_weight.shape != y.shape or np.any(sample_weight <= 0):
                raise ValueError("sample_weight must be positive with one entry per row")

        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        if self.standardize:
            self.mean_, self.scale_ = fit_standardizer(X)
        else:
            self.mean_ = self.scale_ = None

        val = None
        if validation is not None:
            vX, vy, vz, vw = validation
            vX = check_array(vX, dtype=np.float64)
            vz = self._protected(vX, vz)
            if not (self.mitigate or self.weighted):
                vw = None
            val = (self._scale(vX), np.asarray(vy, dtype=np.int64), vz, vw)

        result = train(
            self._scale(X),
            y,
            z,
            self._model_spec(),
            self._train_config(),
            self._mitigation() if self.mitigate else None,
            sample_weight=sample_weight if (self.mitigate or self.weighted) else None,
            validation=val,
        )
        self.state_ = result.state
        self.trace_ = result.trace
        self.best_epoch_ = result.best_epoch
        self.best_loss_ = result.best_loss
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "state_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        p, _ = forward(self.state_, self._model_spec(), self._scale(X))
        p = p.astype(np.float64)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= self.threshold).astype(np.int64)

    def to_dict(self) -> dict:
        """JSON-serializable document holding params, scaler and weights."""
        check_is_fitted(self, "state_")
        return {
            "tool_version": __version__,
            "params": self.get_params(),
            "n_features_in": int(self.n_features_in_),
            "standardizer": None
            if self.mean_ is None
            else {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()},
            "best_epoch": int(self.best_epoch_),
            "state": state_to_dict(self.state_),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FairClassifier":
        est = cls(**doc["params"])
        est.state_ = state_from_dict(doc["state"])
        est.n_features_in_ = doc["n_features_in"]
        est.classes_ = np.array([0, 1])
        std = doc.get("standardizer")
        if std is None:
            est.mean_ = est.scale_ = None
        else:
            est.mean_ = np.asarray(std["mean"])
            est.scale_ = np.asarray(std["scale"])
        est.best_epoch_ = doc.get("best_epoch", 0)
        est.trace_ = []
        return est
