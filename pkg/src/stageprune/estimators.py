"""scikit-learn style wrappers around supernet training, search and retraining.

Inputs are image batches ``[n, c, h, w]`` (``[n, h, w]`` is read as one
channel). Pixel standardisation statistics are learned in ``fit``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .cost import Budget, CostTable
from .search import EAConfig, dea_search
from .slimnet import Supernet, SupernetSpec, desk_spec
from .training import TrainConfig, fit_standalone, train_supernet


def _as_images(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise ValueError(f"expected images [n, c, h, w] or [n, h, w], got shape {X.shape}")
    return X


def _check_images(X, y=None):
    if y is None:
        return _as_images(check_array(X, allow_nd=True, dtype=np.float32))
    X, y = check_X_y(X, y, allow_nd=True, dtype=np.float32)
    return _as_images(X), y


class _ImageClassifier(ClassifierMixin, BaseEstimator):
    """Shared label encoding, standardisation and prediction."""

    def _prepare_fit(self, X, y):
        X, y = _check_images(X, y)
        self.classes_ = unique_labels(y)
        y_idx = np.searchsorted(self.classes_, y)
        if self.standardize:
            self.mean_, self.std_ = float(X.mean()), float(X.std()) or 1.0
        else:
            self.mean_, self.std_ = 0.0, 1.0
        return self._scale(X), y_idx

    def _scale(self, X):
        return ((X - self.mean_) / self.std_).astype(np.float32)

    def _train_cfg(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, lr_decay=self.lr_decay,
                           decay_epochs=self.decay_epochs, momentum=self.momentum,
                           weight_decay=self.weight_decay, seed=self.seed, grad_clip=self.grad_clip)

    def _spec_for(self, X) -> SupernetSpec:
        if self.spec is not None:
            return self.spec
        _, c, h, w = X.shape
        if h != w:
            raise ValueError("default spec needs square images; pass spec=")
        return desk_spec(in_channels=c, size=h, n_classes=len(self.classes_))

    def predict(self, X, config=None):
        check_is_fitted(self, "net_")
        X = self._scale(_check_images(X))
        return self.classes_[self.net_.predict(X, config, adapted=self._adapted)]


class SupernetTrainer(_ImageClassifier):
    """Train a stage-wise supernet with sandwich sampling and inplace distillation.

    ``predict(X, config)`` scores any width config with the inherited
    weights, routed through the stage adapters.
    """

    _adapted = True

    def __init__(self, spec: SupernetSpec | None = None, epochs: int = 20, batch_size: int = 64, lr: float = 0.025,
                 lr_decay: float = 0.1, decay_epochs=14, momentum: float = 0.9, weight_decay: float = 3e-4,
                 n_random: int = 1, grad_clip: float = 2.0, standardize: bool = True, seed: int = 0,
                 n_jobs: int = 1):
        self.spec = spec
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.decay_epochs = decay_epochs
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.n_random = n_random
        self.grad_clip = grad_clip
        self.standardize = standardize
        self.seed = seed
        self.n_jobs = n_jobs

    def _train_cfg(self) -> TrainConfig:
        cfg = super()._train_cfg()
        cfg.n_random = self.n_random
        return cfg

    def fit(self, X, y):
        X, y_idx = self._prepare_fit(X, y)
        spec = self._spec_for(X)
        self.net_ = Supernet(spec, seed=self.seed)
        self.log_ = train_supernet(self.net_, X, y_idx, self._train_cfg(), n_jobs=self.n_jobs)
        return self


class StageWiseSearch(BaseEstimator):
    """Budgeted width search over a fitted :class:`SupernetTrainer`.

    ``fit(X)`` caches fullnet stage features of ``X`` (a held-out batch)
    and runs the two-level evolutionary search; the result is
    ``best_config_``. ``transform`` is not provided: the output of a search
    is a configuration, not features.
    """

    def __init__(self, trainer: SupernetTrainer | None = None, budget_macs: float | None = None,
                 budget_ms: float | None = None, cost_table: CostTable | None = None, population: int = 32,
                 top_k: int = 8, iterations: int = 10, mutation_prob: float = 0.1, manager_population: int = 16,
                 manager_top_k: int = 4, manager_iterations: int = 5, seed: int = 0, n_jobs: int = 1):
        self.trainer = trainer
        self.budget_macs = budget_macs
        self.budget_ms = budget_ms
        self.cost_table = cost_table
        self.population = population
        self.top_k = top_k
        self.iterations = iterations
        self.mutation_prob = mutation_prob
        self.manager_population = manager_population
        self.manager_top_k = manager_top_k
        self.manager_iterations = manager_iterations
        self.seed = seed
        self.n_jobs = n_jobs

    def _budget(self) -> Budget:
        if (self.budget_macs is None) == (self.budget_ms is None):
            raise ValueError("set exactly one of budget_macs and budget_ms")
        if self.budget_ms is not None:
            if self.cost_table is None:
                raise ValueError("latency budgets need cost_table")
            return Budget("latency", float(self.budget_ms))
        return Budget("flops", float(self.budget_macs))

    def fit(self, X, y=None):
        if self.trainer is None:
            raise ValueError("StageWiseSearch needs a fitted SupernetTrainer")
        check_is_fitted(self.trainer, "net_")
        budget = self._budget()
        X = self.trainer._scale(_check_images(X))
        net = self.trainer.net_
        stage_cfg = EAConfig(population=self.population, top_k=self.top_k, iterations=self.iterations,
                             mutation_prob=self.mutation_prob, seed=self.seed)
        manager_cfg = EAConfig(population=self.manager_population, top_k=self.manager_top_k,
                               iterations=self.manager_iterations, mutation_prob=self.mutation_prob,
                               seed=self.seed + 1)
        self.result_ = dea_search(net, net.stage_features(X), budget, stage_cfg, manager_cfg,
                                  self.cost_table, n_jobs=self.n_jobs)
        self.best_config_ = self.result_.config
        self.best_loss_ = self.result_.total_loss
        return self


class SubnetClassifier(_ImageClassifier):
    """A network with fixed per-layer widths ``config``, trained from scratch."""

    _adapted = False

    def __init__(self, config=None, spec: SupernetSpec | None = None, epochs: int = 20, batch_size: int = 64,
                 lr: float = 0.025, lr_decay: float = 0.1, decay_epochs=14, momentum: float = 0.9,
                 weight_decay: float = 3e-4, grad_clip: float = 0.0, standardize: bool = True, seed: int = 0):
        self.config = config
        self.spec = spec
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.decay_epochs = decay_epochs
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.standardize = standardize
        self.seed = seed

    def fit(self, X, y):
        X, y_idx = self._prepare_fit(X, y)
        spec = self._spec_for(X)
        config = spec.full_config() if self.config is None else tuple(self.config)
        self.net_ = fit_standalone(spec, config, X, y_idx, self._train_cfg())
        return self

    def predict(self, X):
        return super().predict(X)
