"""GRU-D-lite: a recurrent classifier with trainable temporal decays.

Missing inputs are replaced by a decayed blend of the last observation
and the feature's empirical mean; the hidden state is decayed by the
time gap before each update. The gate input is the repaired value
concatenated with the step's mask.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import InvalidInputError, ShapeError
from ..core import Batch, compute_delta, fit_norm_stats, _iter_index_chunks
from .. import tensor as T
from .artifact import ModelArtifact, register_model
from .base import Classifier, GradientModel, TrainConfig

_EVAL_CHUNK = 256


def decay(delta_t: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """gamma = exp(-max(0, w*delta + b)); always in (0, 1] for delta >= 0.

    A vector w gives the per-feature input decay; a (D, H) matrix gives
    the hidden decay through delta @ w + b.
    """
    delta_t = np.asarray(delta_t, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 2:
        z = delta_t @ w + b
    else:
        z = w * delta_t + b
    return np.exp(-np.maximum(0.0, z))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@register_model
class GrudLiteModel(GradientModel, Classifier):
    """GRU over [repaired value, mask] with input and hidden decays."""

    kind = "grud_lite"

    def __init__(self, n_steps: int, n_features: int, n_classes: int,
                 hidden_size: int = 256, normalize: bool = True, init_seed: int = 0):
        if n_steps < 1 or n_features < 1:
            raise InvalidInputError("grud_lite series dimensions must be positive")
        if n_classes < 2:
            raise InvalidInputError(f"n_classes must be at least 2, got {n_classes}")
        if hidden_size < 1:
            raise InvalidInputError(f"hidden_size must be positive, got {hidden_size}")
        self.n_steps = n_steps
        self.n_features = n_features
        self.n_classes = n_classes
        self.hidden_size = hidden_size
        self.normalize = bool(normalize)
        self.init_seed = int(init_seed)
        self.norm_stats = None
        # empirical feature means in working space; set by prepare_fit
        self.x_bar = np.zeros(n_features, dtype=np.float64)
        self.parameters = self._init_params()

    def _init_params(self) -> dict[str, np.ndarray]:
        rng = np.random.Generator(np.random.PCG64(self.init_seed))

        def xavier(fan_in, fan_out):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, (fan_in, fan_out))

        d, hid = self.n_features, self.hidden_size
        params: dict[str, np.ndarray] = {}
        # small positive decay weights: exactly zero would pin the relu
        # at its flat region and freeze the decays
        params["w_dx"] = rng.uniform(0.0, 0.1, d)
        params["b_dx"] = np.zeros(d)
        params["w_dh"] = rng.uniform(0.0, 0.1, (d, hid))
        params["b_dh"] = np.zeros(hid)
        for gate in ("z", "r", "c"):
            params[f"w_{gate}"] = xavier(2 * d, hid)
            params[f"u_{gate}"] = xavier(hid, hid)
            params[f"b_{gate}"] = np.zeros(hid)
        # zero readout makes the untrained model exactly uniform
        params["w_out"] = np.zeros((hid, self.n_classes))
        params["b_out"] = np.zeros(self.n_classes)
        return params

    # -- serialization ----------------------------------------------------
    def hyperparams(self) -> dict:
        return {"n_steps": self.n_steps, "n_features": self.n_features,
                "n_classes": self.n_classes, "hidden_size": self.hidden_size,
                "normalize": self.normalize, "init_seed": self.init_seed}

    def tensors(self) -> dict[str, np.ndarray]:
        out = dict(self.parameters)
        out["x_bar"] = self.x_bar
        return out

    @classmethod
    def from_artifact(cls, art: ModelArtifact) -> "GrudLiteModel":
        hp = art.hyperparams
        model = cls(int(hp["n_steps"]), int(hp["n_features"]), int(hp["n_classes"]),
                    hidden_size=int(hp["hidden_size"]), normalize=bool(hp["normalize"]),
                    init_seed=int(hp["init_seed"]))
        for name in model.parameters:
            model.parameters[name] = art.tensors[name].copy()
        model.x_bar = art.tensors["x_bar"].copy()
        model.norm_stats = art.norm
        return model

    def supported_metrics(self) -> tuple[str, ...]:
        return ("val_loss", "val_accuracy")

    # -- data preparation ---------------------------------------------------
    def _to_working(self, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
        hit = mask != 0
        if self.norm_stats is None:
            return np.where(hit, values, 0.0)
        stats = self.norm_stats
        return np.where(hit, (values - stats.mean) / stats.std, 0.0)

    def _prepare_batch(self, batch: Batch):
        """Working values, float mask, deltas, and carried last values."""
        maskf = (batch.mask != 0).astype(np.float64)
        x_work = self._to_working(batch.values, batch.mask)
        n = x_work.shape[0]
        delta = np.empty_like(x_work)
        for i in range(n):
            delta[i] = compute_delta(batch.timestamps[i], batch.mask[i])
        x_last = np.empty_like(x_work)
        x_last[:, 0, :] = self.x_bar
        for t in range(1, x_work.shape[1]):
            prev = maskf[:, t - 1, :] != 0
            x_last[:, t, :] = np.where(prev, x_work[:, t - 1, :], x_last[:, t - 1, :])
        return x_work, maskf, delta, x_last

    # -- forward -------------------------------------------------------------
    def _logits_graph(self, p: dict, x_work, maskf, delta, x_last) -> T.Tensor:
        n, n_steps, _ = x_work.shape
        h = T.constant(np.zeros((n, self.hidden_size)))
        x_bar = self.x_bar
        for t in range(n_steps):
            d_t = T.constant(delta[:, t, :])
            m_t = maskf[:, t, :]
            gx = T.exp(-T.relu(d_t * p["w_dx"] + p["b_dx"]))
            gh = T.exp(-T.relu(d_t @ p["w_dh"] + p["b_dh"]))
            blend = gx * T.constant(x_last[:, t, :]) + (1.0 - gx) * T.constant(
                np.broadcast_to(x_bar, m_t.shape))
            x_hat = T.constant(m_t * x_work[:, t, :]) + T.constant(1.0 - m_t) * blend
            h = gh * h
            inp = T.concat([x_hat, T.constant(m_t)])
            z = T.sigmoid(inp @ p["w_z"] + h @ p["u_z"] + p["b_z"])
            r = T.sigmoid(inp @ p["w_r"] + h @ p["u_r"] + p["b_r"])
            cand = T.tanh(inp @ p["w_c"] + (r * h) @ p["u_c"] + p["b_c"])
            h = (1.0 - z) * h + z * cand
        return h @ p["w_out"] + p["b_out"]

    def grud_step(self, x_t, m_t, delta_t, x_last, h_prev):
        """One recurrence step on plain arrays; the unrolled graph's oracle.

        Returns (h_t, x_hat, next x_last). x_t is a working-space,
        zero-filled value row.
        """
        p = self.parameters
        x_t = np.asarray(x_t, dtype=np.float64)
        m_t = np.asarray(m_t, dtype=np.float64)
        gx = decay(delta_t, p["w_dx"], p["b_dx"])
        gh = decay(delta_t, p["w_dh"], p["b_dh"])
        x_hat = m_t * x_t + (1.0 - m_t) * (gx * x_last + (1.0 - gx) * self.x_bar)
        h = gh * h_prev
        inp = np.concatenate([x_hat, m_t], axis=-1)
        z = _sigmoid(inp @ p["w_z"] + h @ p["u_z"] + p["b_z"])
        r = _sigmoid(inp @ p["w_r"] + h @ p["u_r"] + p["b_r"])
        cand = np.tanh(inp @ p["w_c"] + (r * h) @ p["u_c"] + p["b_c"])
        h_t = (1.0 - z) * h + z * cand
        x_last_next = np.where(m_t != 0, x_t, x_last)
        return h_t, x_hat, x_last_next

    # -- training --------------------------------------------------------------
    def prepare_fit(self, train_set) -> None:
        stats = fit_norm_stats(train_set)
        if self.normalize:
            self.norm_stats = stats
            # the observed mean lands exactly at the working-space origin
            self.x_bar = (stats.mean - stats.mean) / stats.std
        else:
            self.x_bar = stats.mean.copy()

    def batch_loss_sum(self, leaves: dict, batch: Batch) -> T.Tensor:
        if batch.labels is None:
            raise InvalidInputError("grud_lite training requires labels on every sample")
        logits = self._logits_graph(leaves, *self._prepare_batch(batch))
        return T.cross_entropy_with_logits(logits, batch.labels)

    def validation_metric(self, val_set, config: TrainConfig) -> float:
        want_acc = config.selection_metric == "val_accuracy"
        total = 0.0
        n = 0
        for idx in _iter_index_chunks(len(val_set), _EVAL_CHUNK):
            batch = val_set.training_batch([int(i) for i in idx])
            if batch.labels is None:
                raise InvalidInputError("grud_lite validation requires labels")
            logits = self._logits_np(batch)
            if want_acc:
                total += float((logits.argmax(axis=1) == batch.labels).sum())
            else:
                total += float(T.cross_entropy_with_logits(
                    T.constant(logits), batch.labels).data)
            n += logits.shape[0]
        return total / n

    # -- inference ----------------------------------------------------------
    def _logits_np(self, batch: Batch) -> np.ndarray:
        params = {name: T.constant(arr) for name, arr in self.parameters.items()}
        return self._logits_graph(params, *self._prepare_batch(batch)).data

    def predict_proba_batch(self, batch: Batch) -> np.ndarray:
        if batch.values.shape[1:] != (self.n_steps, self.n_features):
            raise ShapeError(
                f"classify: batch shape {batch.values.shape[1:]} does not match "
                f"model ({self.n_steps}, {self.n_features})")
        return _softmax_rows(self._logits_np(batch))
