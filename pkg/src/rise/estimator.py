"""scikit-learn style wrapper around network fitting, prediction and scoring."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from rise.core import MaskedSeries, RiseConfig, RiseNetwork
from rise.evaluation import EvalReport, evaluate
from rise.training import Checkpoint, TrainConfig, fit_network, load_checkpoint, save_checkpoint
from rise.validation import check_encoder, check_instance, check_series


class RiseImputer(BaseEstimator):
    """Recurrent imputer for univariate series with missing observations.

    Parameters mirror :class:`RiseConfig` and :class:`TrainConfig`.
    ``selection`` picks which validated snapshot is loaded after fitting:
    the one with the best validation MdAPE or the best validation MAPE.

    Examples
    --------
    >>> from rise import RiseImputer, SyntheticSpec, generate_synthetic
    >>> corpus = generate_synthetic(SyntheticSpec(n_series=20, length=40))
    >>> model = RiseImputer(d=8, d_h=8, n_classes=16, epochs=1).fit(corpus.series[:16], validation=corpus.series[16:])
    >>> len(model.predict(corpus.series[:1])[0])
    40
    """

    def __init__(
        self,
        instance: str = "simple",
        encoder: str = "id",
        d: int = 64,
        d_d: int = 64,
        d_h: int = 64,
        n_layers: int = 2,
        n_classes: int = 128,
        n_bin: int = 50,
        precision: int = 2,
        delta_precision: int = 2,
        objective: str = "classification",
        epochs: int = 100,
        lr: float = 1e-3,
        l2: float = 1e-4,
        batch_size: int = 1,
        clip_norm: float = 5.0,
        min_prior: int = 10,
        selection: str = "mdape",
        standardize_identity: bool = True,
        seed: int = 0,
    ):
        self.instance = instance
        self.encoder = encoder
        self.d = d
        self.d_d = d_d
        self.d_h = d_h
        self.n_layers = n_layers
        self.n_classes = n_classes
        self.n_bin = n_bin
        self.precision = precision
        self.delta_precision = delta_precision
        self.objective = objective
        self.epochs = epochs
        self.lr = lr
        self.l2 = l2
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.min_prior = min_prior
        self.selection = selection
        self.standardize_identity = standardize_identity
        self.seed = seed

    def rise_config(self) -> RiseConfig:
        return RiseConfig(
            instance=check_instance(self.instance),
            encoder=check_encoder(self.encoder),
            d=self.d,
            d_d=self.d_d,
            d_h=self.d_h,
            n_layers=self.n_layers,
            n_classes=self.n_classes,
            n_bin=self.n_bin,
            precision=self.precision,
            delta_precision=self.delta_precision,
            objective=self.objective,
            seed=self.seed,
            standardize_identity=self.standardize_identity,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            l2=self.l2,
            batch_size=self.batch_size,
            clip_norm=self.clip_norm,
            seed=self.seed,
            min_prior=self.min_prior,
        )

    def fit(self, X, y=None, *, validation=None, quantizer=None, per_series_mean: bool = False):
        """Fit on training series ``X``; ``y`` is ignored (targets are the series themselves).

        Without ``validation``, the last tenth of ``X`` (at least one series)
        is held out for checkpoint selection.
        """
        if self.selection not in ("mdape", "mape"):
            raise ValueError(f"selection must be 'mdape' or 'mape', got {self.selection!r}")
        train = check_series(X)
        if validation is None:
            if len(train) < 2:
                raise ValueError("need at least two series when no validation set is given")
            n_val = max(1, len(train) // 10)
            train, val = train[:-n_val], train[-n_val:]
        else:
            val = check_series(validation)
        network = RiseNetwork(self.rise_config())
        network.fit_statistics(train, per_series_mean=per_series_mean, quantizer=quantizer)
        self.checkpoint_, self.log_ = fit_network(network, train, val, self.train_config())
        self.network_ = network
        self._load_selected()
        return self

    def _load_selected(self):
        slot = self.checkpoint_.best_mdape if self.selection == "mdape" else self.checkpoint_.best_mape
        self.network_.params.load(slot.params)

    def predict(self, X) -> list[np.ndarray]:
        """One-step-ahead predictions per series; entry ``j`` uses only steps before ``j``."""
        check_is_fitted(self, "network_")
        return self.network_.predict_series(check_series(X))

    def transform(self, X) -> list[MaskedSeries]:
        """Series with missing values filled by the model; masks are kept to flag imputed entries."""
        series = check_series(X)
        out = []
        for s, pred in zip(series, self.predict(series)):
            filled = np.where(s.m == 1, s.x, pred)
            if s.m[0] == 0:
                filled[0] = self.network_.x_av_for(s.series_id)
            out.append(MaskedSeries(s.t, filled, s.m, s.series_id))
        return out

    def evaluate(self, X, truth=None) -> EvalReport:
        check_is_fitted(self, "network_")
        return evaluate(self.network_, check_series(X), min_prior=self.min_prior, truth=truth)

    def score(self, X, y=None) -> float:
        """Negative MdAPE, so that larger is better."""
        return -self.evaluate(X).mdape

    def save(self, path) -> None:
        check_is_fitted(self, "network_")
        save_checkpoint(path, self.network_, self.checkpoint_, {"estimator": self.get_params()})

    @classmethod
    def load(cls, path) -> "RiseImputer":
        network, ckpt, extra = load_checkpoint(path)
        model = cls(**extra.get("estimator", {}))
        model.network_, model.checkpoint_, model.log_ = network, ckpt, []
        model._load_selected()
        return model

    @property
    def checkpoint(self) -> Checkpoint:
        check_is_fitted(self, "checkpoint_")
        return self.checkpoint_
