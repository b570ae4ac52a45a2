"""Feed-forward ReLU classifier with do-intervention overlays.

The network is plain numpy: weights are stored as ``(fan_in, fan_out)``
matrices and the forward pass can clamp either an input column or a hidden
neuron's post-activation output without touching the stored parameters.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .dataset import CATEGORICAL, EncodedMatrix, Encoder

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_HIDDEN = (64, 32, 16, 8, 4)
GAP_DECAY = 0.95
GAP_TOLERANCE = 0.02


class InterventionError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeTarget:
    name: str


@dataclass(frozen=True)
class NeuronTarget:
    layer: int  # hidden layer index, 0 = first hidden layer
    index: int


@dataclass(frozen=True)
class Intervention:
    """do(target = value); attribute values are raw, neuron values post-activation."""

    target: Union[AttributeTarget, NeuronTarget]
    value: object


@dataclass(eq=False)
class MLP:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    encoder: Encoder | None = None
    schema_fingerprint: str | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ModelFormatError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ModelFormatError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ModelFormatError(
                    f"layer {i}: expects {w.shape[0]} inputs, previous layer emits {self.weights[i - 1].shape[1]}"
                )
        if self.weights[-1].shape[1] != 2:
            raise ModelFormatError("output layer must have 2 units")
        if self.encoder is not None and self.encoder.width != self.input_dim:
            raise ModelFormatError("encoder width does not match input dimension")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @property
    def n_hidden_neurons(self) -> int:
        return sum(self.hidden_sizes)

    def neurons(self) -> list[NeuronTarget]:
        return [NeuronTarget(l, j) for l, size in enumerate(self.hidden_sizes) for j in range(size)]

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   self.encoder, self.schema_fingerprint)


def init_mlp(input_dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN, seed: int = 0,
             encoder: Encoder | None = None, schema_fingerprint: str | None = None) -> MLP:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [input_dim, *hidden, 2]
    weights = [rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return MLP(weights, biases, encoder, schema_fingerprint)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _attribute_column(model: MLP, target: AttributeTarget, value) -> tuple[int, float]:
    enc = model.encoder
    if enc is None:
        raise InterventionError("attribute interventions need a model with an encoder")
    if target.name not in enc.names:
        raise InterventionError(f"unknown attribute {target.name!r}")
    j = enc.names.index(target.name)
    if enc.kinds[j] == CATEGORICAL:
        if str(value) not in enc.categories[target.name]:
            raise InterventionError(f"{value!r} outside the domain of {target.name!r}")
    else:
        lo, hi = enc.norm_params[j]
        if not lo <= float(value) <= hi:
            raise InterventionError(f"{value!r} outside [{lo}, {hi}] for {target.name!r}")
    return j, enc.encode_value(target.name, value)


def _check_neuron(model: MLP, target: NeuronTarget) -> None:
    sizes = model.hidden_sizes
    if not 0 <= target.layer < len(sizes) or not 0 <= target.index < sizes[target.layer]:
        raise InterventionError(f"neuron {target} outside architecture {sizes}")


def _check_batch(model: MLP, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != model.input_dim:
        raise ValueError(f"batch shape {batch.shape} does not match input dimension {model.input_dim}")
    return batch


def hidden_activations(model: MLP, batch: np.ndarray) -> list[np.ndarray]:
    """Post-activation outputs of every hidden layer."""
    h = _check_batch(model, batch)
    acts = []
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    return acts


def _propagate(model: MLP, h: np.ndarray, start: int) -> np.ndarray:
    """Continue from the output of hidden layer ``start - 1`` (or inputs if start == 0)."""
    last = len(model.weights) - 1
    for i in range(start, last):
        h = np.maximum(h @ model.weights[i] + model.biases[i], 0.0)
    return _softmax(h @ model.weights[last] + model.biases[last])


def forward(model: MLP, batch: np.ndarray, intervention: Intervention | None = None) -> np.ndarray:
    """Class probabilities, optionally under ``do(target = value)``."""
    h = _check_batch(model, batch)
    if intervention is None:
        return _propagate(model, h, 0)
    target = intervention.target
    if isinstance(target, AttributeTarget):
        j, encoded = _attribute_column(model, target, intervention.value)
        h = h.copy()
        h[:, j] = encoded
        return _propagate(model, h, 0)
    if isinstance(target, NeuronTarget):
        _check_neuron(model, target)
        for i in range(target.layer + 1):
            h = np.maximum(h @ model.weights[i] + model.biases[i], 0.0)
        h[:, target.index] = float(intervention.value)
        return _propagate(model, h, target.layer + 1)
    raise InterventionError(f"unsupported target {target!r}")


def predict_from_probs(probs: np.ndarray) -> np.ndarray:
    # ties go to class 0
    return (probs[:, 1] > probs[:, 0]).astype(np.int64)


def predict(model: MLP, batch: np.ndarray, intervention: Intervention | None = None) -> np.ndarray:
    return predict_from_probs(forward(model, batch, intervention))


class ActivationCache:
    """Hidden activations of a fixed batch, reused across neuron interventions."""

    def __init__(self, model: MLP, batch: np.ndarray):
        self.model = model
        self.acts = hidden_activations(model, batch)

    def probs_with(self, target: NeuronTarget, value: float) -> np.ndarray:
        _check_neuron(self.model, target)
        h = self.acts[target.layer].copy()
        h[:, target.index] = value
        return _propagate(self.model, h, target.layer + 1)

    def neuron_range(self, target: NeuronTarget) -> tuple[float, float]:
        col = self.acts[target.layer][:, target.index]
        return float(col.min()), float(col.max())


def _features(data) -> np.ndarray:
    return data.features if isinstance(data, EncodedMatrix) else np.asarray(data, dtype=float)


def neuron_range(model: MLP, data, target: NeuronTarget) -> tuple[float, float]:
    """Exact (min, max) of one neuron's post-activation output over ``data``."""
    _check_neuron(model, target)
    x = _features(data)
    if len(x) == 0:
        raise ValueError("empty data")
    return ActivationCache(model, x).neuron_range(target)


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.001
    batch_size: int = 32
    seed: int = 0
    use_sample_weights: bool = False
    fairness_penalty: float = 0.0
    penalty_attribute: str | None = None
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.fairness_penalty < 0:
            raise ValueError("fairness_penalty must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        self.hidden = tuple(self.hidden)


def loss_and_grad(model: MLP, x: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None,
                  privileged: np.ndarray | None = None, penalty: float = 0.0,
                  favorable: int = 1) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Weighted cross-entropy plus ``penalty * |mean P(fav | priv) - mean P(fav | unpriv)|``.

    Returns (loss, weight gradients, bias gradients). The gap term is
    skipped when either group is absent from the batch.
    """
    loss, gw, gb, _ = _loss_and_grad(model, x, y, weights, privileged, penalty, favorable)
    return loss, gw, gb


def _loss_and_grad(model, x, y, weights, privileged, penalty, favorable, gap_sign=None):
    # gap_sign overrides sign(batch gap) in the penalty gradient; returns the batch gap too
    gap = 0.0
    n = len(y)
    w_s = np.ones(n) if weights is None else weights
    total_w = w_s.sum()

    layer_in = [x]
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        layer_in.append(h)
    probs = _softmax(h @ model.weights[-1] + model.biases[-1])

    p_true = np.clip(probs[np.arange(n), y], 1e-300, None)
    loss = float(np.sum(w_s * -np.log(p_true)) / total_w)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), y] = 1.0
    d_logits = (probs - onehot) * (w_s / total_w)[:, None]

    if penalty > 0 and privileged is not None:
        priv = np.asarray(privileged, dtype=bool)
        n_p, n_u = priv.sum(), (~priv).sum()
        if n_p and n_u:
            p_fav = probs[:, favorable]
            gap = float(p_fav[priv].mean() - p_fav[~priv].mean())
            loss += penalty * abs(gap)
            sign = np.sign(gap) if gap_sign is None else gap_sign
            coef = np.where(priv, 1.0 / n_p, -1.0 / n_u) * penalty * sign
            e_fav = np.zeros(2)
            e_fav[favorable] = 1.0
            d_logits += (coef * p_fav)[:, None] * (e_fav[None, :] - probs)

    grads_w, grads_b = [], []
    delta = d_logits
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w.append(layer_in[i].T @ delta)
        grads_b.append(delta.sum(axis=0))
        if i:
            delta = (delta @ model.weights[i].T) * (layer_in[i] > 0)
    return loss, grads_w[::-1], grads_b[::-1], gap


def train(data: EncodedMatrix, config: TrainConfig, groups: np.ndarray | None = None,
          favorable: int = 1, schema_fingerprint: str | None = None) -> MLP:
    """Mini-batch training of a fresh network.

    ``groups`` is the privileged-membership mask of the penalty attribute;
    it is required whenever ``config.fairness_penalty > 0``.

    The penalty targets the gap over the whole training set. A mini-batch
    gap is a noisy estimate whose absolute value is biased upward, so the
    direction of the penalty gradient comes from a running average of batch
    gaps rather than from each batch alone. Within ``GAP_TOLERANCE`` of zero
    the push fades linearly (a Huber-style smoothing of the absolute value)
    so that sampling noise near parity does not keep kicking the weights.
    """
    x, y = data.features, data.labels
    if len(y) == 0:
        raise ValueError("cannot train on empty data")
    lam = config.fairness_penalty
    if lam > 0 and (groups is None or config.penalty_attribute is None):
        raise ValueError("fairness penalty needs penalty_attribute and group masks")
    if groups is not None:
        groups = np.asarray(groups, dtype=bool)
    sample_w = data.weights if config.use_sample_weights else np.ones(len(y))

    model = init_mlp(x.shape[1], config.hidden, config.seed, data.encoder, schema_fingerprint)
    rng = np.random.default_rng(config.seed + 1)
    params = model.weights + model.biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    running_gap = None
    for epoch in range(config.epochs):
        order = rng.permutation(len(y))
        epoch_loss = 0.0
        for start in range(0, len(y), config.batch_size):
            idx = order[start:start + config.batch_size]
            sign = None if running_gap is None else float(np.clip(running_gap / GAP_TOLERANCE, -1.0, 1.0))
            loss, gw, gb, gap = _loss_and_grad(
                model, x[idx], y[idx], sample_w[idx],
                groups[idx] if groups is not None and lam > 0 else None, lam, favorable, sign,
            )
            if lam > 0:
                running_gap = gap if running_gap is None else GAP_DECAY * running_gap + (1 - GAP_DECAY) * gap
            epoch_loss += loss * len(idx)
            step += 1
            for k, g in enumerate(gw + gb):
                if config.optimizer == "sgd":
                    params[k] -= config.learning_rate * g
                    continue
                m[k] = beta1 * m[k] + (1 - beta1) * g
                v[k] = beta2 * v[k] + (1 - beta2) * g * g
                m_hat = m[k] / (1 - beta1 ** step)
                v_hat = v[k] / (1 - beta2 ** step)
                params[k] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        if not np.isfinite(epoch_loss) or not all(np.isfinite(p).all() for p in params):
            raise TrainingError(f"training diverged at epoch {epoch}", epoch)
        logger.debug("epoch %d loss %.5f", epoch, epoch_loss / len(y))
    return model


def model_to_dict(model: MLP) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "architecture": {
            "input_dim": model.input_dim,
            "hidden": list(model.hidden_sizes),
            "hidden_activation": "relu",
            "output": "softmax",
        },
        "layers": [{"weights": w.tolist(), "bias": b.tolist()} for w, b in zip(model.weights, model.biases)],
        "schema_fingerprint": model.schema_fingerprint,
        "encoder": model.encoder.to_dict() if model.encoder is not None else None,
    }


def model_from_dict(d: dict) -> MLP:
    try:
        if d["format_version"] > FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format version {d['format_version']}")
        weights = [np.array(layer["weights"], dtype=float) for layer in d["layers"]]
        biases = [np.array(layer["bias"], dtype=float) for layer in d["layers"]]
        encoder = Encoder.from_dict(d["encoder"]) if d.get("encoder") else None
        model = MLP(weights, biases, encoder, d.get("schema_fingerprint"))
        arch = d["architecture"]
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None
    if arch["input_dim"] != model.input_dim or list(arch["hidden"]) != list(model.hidden_sizes):
        raise ModelFormatError("declared architecture does not match stored layers")
    return model


def save(model: MLP, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load(path) -> MLP:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
    return model_from_dict(d)
