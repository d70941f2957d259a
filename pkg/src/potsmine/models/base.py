"""Task contracts, the training loop, and checkpoint election.

Models fall into two families. Gradient models (SAITS-lite, GRU-D-lite)
train through the tape engine with minibatch Adam steps; analytic models
(LOCF, mean, two-stage k-means, TMF) compute their parameters in closed
form. Both go through the same fit() entry point so the CLI and the
backend-equivalence guarantees treat them uniformly.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ..errors import InvalidInputError, TrainingDivergedError, UnsupportedTaskError
from ..core import Batch, NormStats, _iter_index_chunks
from .. import tensor as T

_EVAL_CHUNK = 256


# ---------------------------------------------------------------------------
# configuration and checkpointing

@dataclass
class TrainConfig:
    """Knobs for one fit() run.

    patience counts consecutive epochs without improvement of the
    selection metric; 0 disables early stopping. workers is the number
    of gradient shards per minibatch.
    """

    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    patience: int = 0
    seed: int = 0
    workers: int = 1
    selection_metric: str = "val_loss"

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInputError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be positive, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise InvalidInputError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.patience < 0:
            raise InvalidInputError(f"patience must be non-negative, got {self.patience}")
        if self.workers < 1:
            raise InvalidInputError(f"workers must be at least 1, got {self.workers}")
        if self.selection_metric not in ("val_loss", "val_accuracy"):
            raise InvalidInputError(
                f"selection_metric must be val_loss or val_accuracy, got {self.selection_metric!r}")


@dataclass
class Checkpoint:
    """Parameter snapshot from the elected epoch (1-indexed)."""

    epoch: int
    metric: float
    parameters: dict[str, np.ndarray] = field(default_factory=dict)


class ElectionResult(NamedTuple):
    best_epoch: int       # 1-indexed
    best_metric: float
    stopped_after: int    # epoch after which training halted (== len(log) if it ran out)


class BestTracker:
    """Argbest election with earliest-epoch tie breaking and patience.

    update() is called once per epoch with the validation metric and
    returns whether this epoch became the new best. Improvement is
    strict, so ties keep the earlier epoch.
    """

    def __init__(self, maximize: bool = False, patience: int = 0):
        self.maximize = maximize
        self.patience = patience
        self.epoch = 0
        self.best_epoch = 0
        self.best_metric: float | None = None
        self.bad_streak = 0

    def update(self, metric: float) -> bool:
        self.epoch += 1
        if self.best_metric is None:
            better = True
        elif self.maximize:
            better = metric > self.best_metric
        else:
            better = metric < self.best_metric
        if better:
            self.best_metric = metric
            self.best_epoch = self.epoch
            self.bad_streak = 0
        else:
            self.bad_streak += 1
        return better

    @property
    def should_stop(self) -> bool:
        return self.patience > 0 and self.bad_streak >= self.patience


def run_election(metrics: Sequence[float], maximize: bool = False,
                 patience: int = 0) -> ElectionResult:
    """Replay checkpoint election over a recorded per-epoch metric log."""
    if len(metrics) == 0:
        raise InvalidInputError("run_election: empty metric log")
    tracker = BestTracker(maximize=maximize, patience=patience)
    stopped_after = len(metrics)
    for i, m in enumerate(metrics, start=1):
        tracker.update(float(m))
        if tracker.should_stop:
            stopped_after = i
            break
    return ElectionResult(tracker.best_epoch, tracker.best_metric, stopped_after)


# ---------------------------------------------------------------------------
# model base classes and task contracts

class BaseModel(ABC):
    """Common surface for serialization and shape checks.

    kind is the artifact tag. n_steps is None for models that accept any
    series length; n_features is always fixed at construction.
    """

    kind: str = ""
    n_steps: int | None = None
    n_features: int = 0
    norm_stats: NormStats | None = None
    inner_model: "BaseModel | None" = None

    @abstractmethod
    def hyperparams(self) -> dict:
        """Scalar/string settings needed to rebuild the model skeleton."""

    @abstractmethod
    def tensors(self) -> dict[str, np.ndarray]:
        """Named parameter arrays, the model's full numeric state."""

    def supported_metrics(self) -> tuple[str, ...]:
        return ("val_loss",)


class Imputer(BaseModel):
    @abstractmethod
    def impute_batch(self, batch: Batch) -> np.ndarray:
        """Completed (B, T, D) values; observed cells preserved bitwise."""


class Classifier(BaseModel):
    @abstractmethod
    def predict_proba_batch(self, batch: Batch) -> np.ndarray:
        """(B, n_classes) probabilities, rows summing to 1."""


class Clusterer(BaseModel):
    @abstractmethod
    def assign_batch(self, batch: Batch) -> np.ndarray:
        """(B,) integer cluster labels in [0, k)."""


class Forecaster(BaseModel):
    @abstractmethod
    def forecast_batch(self, batch: Batch, horizon: int) -> np.ndarray:
        """(B, horizon, D) predictions past the end of each series."""


class AnalyticModel(BaseModel):
    """Models whose fit is a closed-form computation, not an epoch loop."""

    @abstractmethod
    def fit_analytic(self, train_set, val_set, config: TrainConfig) -> float:
        """Fit in place; return the validation metric value."""


class GradientModel(BaseModel):
    """Models trained by minibatch gradient descent on the tape engine."""

    parameters: dict[str, np.ndarray]

    @abstractmethod
    def prepare_fit(self, train_set) -> None:
        """Compute data-dependent state (norm stats, feature means)."""

    @abstractmethod
    def batch_loss_sum(self, leaves: dict[str, T.Tensor], batch: Batch) -> T.Tensor:
        """Scalar tensor: SUM over the batch of per-sample losses."""

    @abstractmethod
    def validation_metric(self, val_set, config: TrainConfig) -> float:
        """Selection metric over the whole validation view."""

    def shard_loss_and_grads(self, view, indices) -> tuple[float, dict]:
        """Loss sum and parameter gradients for one index shard."""
        tape = T.Tape()
        leaves = {name: tape.leaf(arr) for name, arr in self.parameters.items()}
        batch = view.training_batch([int(i) for i in indices])
        loss = self.batch_loss_sum(leaves, batch)
        tape.backward(loss)
        return float(loss.data), {name: lf.grad for name, lf in leaves.items()}


# ---------------------------------------------------------------------------
# task dispatch

def _check_view_shape(model: BaseModel, dataset, task: str) -> None:
    if model.n_steps is not None and dataset.n_steps != model.n_steps:
        raise InvalidInputError(
            f"{task}: dataset has {dataset.n_steps} steps, model expects {model.n_steps}")
    if dataset.n_features != model.n_features:
        raise InvalidInputError(
            f"{task}: dataset has {dataset.n_features} features, "
            f"model expects {model.n_features}")


def _run_batched(dataset, fn) -> np.ndarray:
    out = []
    for idx in _iter_index_chunks(len(dataset), _EVAL_CHUNK):
        out.append(fn(dataset.training_batch([int(i) for i in idx])))
    return np.concatenate(out, axis=0)


def impute(model: BaseModel, dataset) -> np.ndarray:
    """Fill every missing cell; observed cells pass through bitwise."""
    if not isinstance(model, Imputer):
        raise UnsupportedTaskError(model.kind, "impute")
    _check_view_shape(model, dataset, "impute")
    return _run_batched(dataset, model.impute_batch)


def classify(model: BaseModel, dataset) -> np.ndarray:
    """Per-sample class probability rows, each summing to 1."""
    if not isinstance(model, Classifier):
        raise UnsupportedTaskError(model.kind, "classify")
    _check_view_shape(model, dataset, "classify")
    return _run_batched(dataset, model.predict_proba_batch)


def cluster(model: BaseModel, dataset) -> np.ndarray:
    """Per-sample cluster labels in [0, k)."""
    if not isinstance(model, Clusterer):
        raise UnsupportedTaskError(model.kind, "cluster")
    _check_view_shape(model, dataset, "cluster")
    return _run_batched(dataset, model.assign_batch)


def forecast(model: BaseModel, dataset, horizon: int) -> np.ndarray:
    """(N, horizon, D) predictions beyond the observed window."""
    if not isinstance(model, Forecaster):
        raise UnsupportedTaskError(model.kind, "forecast")
    if horizon < 1:
        raise InvalidInputError(f"forecast: horizon must be at least 1, got {horizon}")
    _check_view_shape(model, dataset, "forecast")
    return _run_batched(dataset, lambda b: model.forecast_batch(b, horizon))


# ---------------------------------------------------------------------------
# training loop

def _merge_shard_grads(results: Sequence[tuple[float, dict]], scale: float) -> dict:
    merged: dict[str, np.ndarray | None] = {}
    for _, grads in results:
        for name, g in grads.items():
            if g is None:
                continue
            cur = merged.get(name)
            merged[name] = g if cur is None else cur + g
    return {name: (None if g is None else g * scale) for name, g in merged.items()}


def fit(model: BaseModel, train_set, val_set, config: TrainConfig):
    """Train and return (model, Checkpoint) from the best validation epoch.

    Per epoch: a seeded shuffle (seed = config.seed + 0-based epoch
    index), minibatch Adam steps, then the model's selection metric on
    val_set. Each minibatch is split into config.workers near-equal
    shards whose gradient sums are divided by the batch size before the
    optimizer step, so workers=1 and workers=N agree up to float
    summation order.
    """
    if len(train_set) == 0:
        raise InvalidInputError("fit: training set is empty")
    if len(val_set) == 0:
        raise InvalidInputError("fit: validation set is empty")
    _check_view_shape(model, train_set, "fit")
    _check_view_shape(model, val_set, "fit")
    if config.selection_metric not in model.supported_metrics():
        raise InvalidInputError(
            f"fit: model kind {model.kind!r} does not support "
            f"selection metric {config.selection_metric!r}")

    if isinstance(model, AnalyticModel):
        metric = model.fit_analytic(train_set, val_set, config)
        snap = {k: v.copy() for k, v in model.tensors().items()}
        return model, Checkpoint(epoch=1, metric=float(metric), parameters=snap)
    if not isinstance(model, GradientModel):
        raise InvalidInputError(f"fit: model kind {model.kind!r} is not trainable")

    model.prepare_fit(train_set)
    params = model.parameters
    state = T.AdamState.for_params(params, lr=config.learning_rate)
    tracker = BestTracker(
        maximize=(config.selection_metric == "val_accuracy"), patience=config.patience)
    best: dict[str, np.ndarray] = {}
    n = len(train_set)
    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for epoch_idx in range(config.epochs):
            order = np.random.Generator(
                np.random.PCG64(config.seed + epoch_idx)).permutation(n)
            for batch_no, start in enumerate(range(0, n, config.batch_size), start=1):
                idx = order[start:start + config.batch_size]
                shards = [s for s in np.array_split(idx, config.workers) if s.size]
                if pool is None:
                    results = [model.shard_loss_and_grads(train_set, s) for s in shards]
                else:
                    results = list(pool.map(
                        lambda s: model.shard_loss_and_grads(train_set, s), shards))
                loss_total = sum(r[0] for r in results)
                if not np.isfinite(loss_total):
                    raise TrainingDivergedError(epoch_idx + 1, batch_no, loss_total)
                grads = _merge_shard_grads(results, 1.0 / idx.size)
                T.adam_step(params, grads, state)
            metric = model.validation_metric(val_set, config)
            if tracker.update(metric):
                best = {k: v.copy() for k, v in params.items()}
            if tracker.should_stop:
                break
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    for name, snap in best.items():
        params[name][...] = snap
    return model, Checkpoint(
        epoch=tracker.best_epoch, metric=float(tracker.best_metric),
        parameters={k: v.copy() for k, v in best.items()})


def parallel_fit(model: BaseModel, train_set, val_set, config: TrainConfig):
    """Sharded-gradient training; fit() with the worker count from config.

    fit already shards every minibatch config.workers ways, so this is
    the same loop under its data-parallel name; workers=1 is exactly fit.
    """
    return fit(model, train_set, val_set, config)


def imputer_validation_metric(model: Imputer, val_set, batch_size: int = _EVAL_CHUNK) -> float:
    """Masked MSE of the imputation against pre-corruption values.

    Scored on artificially removed (indicating) cells when the view
    carries them. Plain datasets have no held-out cells, so the metric
    degenerates to 0.0; election is then decided by epoch order alone.
    """
    err = 0.0
    count = 0
    for idx in _iter_index_chunks(len(val_set), batch_size):
        batch = val_set.training_batch([int(i) for i in idx])
        if batch.indicating is None or batch.originals is None:
            continue
        hit = batch.indicating != 0
        if not hit.any():
            continue
        filled = model.impute_batch(batch)
        diff = filled[hit] - batch.originals[hit]
        err += float(diff @ diff)
        count += int(hit.sum())
    if count == 0:
        return 0.0
    return err / count
