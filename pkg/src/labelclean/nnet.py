"""Differentiable probabilistic classifiers trained by cross-entropy.

Two architectures: a full ``c x (d+1)`` softmax layer ("linear-softmax") and
an MLP with ReLU hidden layers.  Parameters live in a single flat float64
vector with a per-affine-layer layout so curvature code can address the
final layer on its own.  All gradients are analytic (hand-written backprop);
Hessian-vector products use an exact second-order pass for the linear model
and symmetric finite differences of the analytic gradient for the MLP.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ExampleSet
from .errors import ConfigurationError, DimensionMismatchError, NumericDivergenceError


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: str  # "linear-softmax" | "mlp"
    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = ()
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("linear-softmax", "mlp"):
            raise ConfigurationError(f"unknown architecture kind {self.kind!r}")
        if self.kind == "linear-softmax" and self.hidden_dims:
            raise ConfigurationError("linear-softmax takes no hidden layers")
        if self.kind == "mlp" and not self.hidden_dims:
            raise ConfigurationError("mlp needs at least one hidden layer")
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigurationError("layer widths must be positive")
        if self.num_classes < 2:
            raise ConfigurationError("need at least 2 classes")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigurationError("dropout_rate must be in [0, 1)")
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))

    @property
    def layer_widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.num_classes)

    @property
    def num_params(self) -> int:
        widths = self.layer_widths
        return sum(widths[i] * widths[i + 1] + widths[i + 1] for i in range(len(widths) - 1))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1024
    # None resolves to 0.9 for mlp and 0.7 for linear-softmax at fit time.
    early_stop_train_accuracy: float | None = None
    early_stop: bool = True
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.early_stop_train_accuracy is not None and not (
            0.0 < self.early_stop_train_accuracy <= 1.0
        ):
            raise ConfigurationError("early_stop_train_accuracy must be in (0, 1]")

    def resolved_early_stop(self, arch: ArchitectureSpec) -> float | None:
        """Accuracy threshold that ends training, or None to always run all
        epochs (needed when retraining must be a fixed-budget procedure)."""
        if not self.early_stop:
            return None
        if self.early_stop_train_accuracy is not None:
            return self.early_stop_train_accuracy
        return 0.7 if arch.kind == "linear-softmax" else 0.9


@dataclass(frozen=True)
class Segment:
    layer_id: str
    offset: int
    length: int


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Flat parameters plus the layer partition map.

    ``values`` is read-only; every segment holds one affine layer laid out as
    ``[W.ravel(), b]``.  ``top_layer_id`` names the final affine layer.
    """

    values: np.ndarray
    layout: tuple[Segment, ...]
    top_layer_id: str
    arch: ArchitectureSpec

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def segment(self, layer_id: str) -> Segment:
        for seg in self.layout:
            if seg.layer_id == layer_id:
                return seg
        raise KeyError(f"no layer {layer_id!r}")

    def top_layer_indices(self) -> np.ndarray:
        seg = self.segment(self.top_layer_id)
        return np.arange(seg.offset, seg.offset + seg.length)

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        if values.shape != self.values.shape:
            raise DimensionMismatchError("replacement values have the wrong length")
        return ParameterVector(np.array(values, dtype=np.float64), self.layout,
                               self.top_layer_id, self.arch)


@dataclass(frozen=True)
class PredictiveDistribution:
    probs: np.ndarray

    def prob_of(self, label: int) -> float:
        return float(self.probs[label - 1])

    @property
    def predicted_label(self) -> int:
        return int(np.argmax(self.probs)) + 1


def _layer_shapes(arch: ArchitectureSpec) -> list[tuple[int, int]]:
    widths = arch.layer_widths
    return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]


def _build_layout(arch: ArchitectureSpec) -> tuple[tuple[Segment, ...], str]:
    segments = []
    offset = 0
    shapes = _layer_shapes(arch)
    for i, (out_w, in_w) in enumerate(shapes):
        length = out_w * in_w + out_w
        segments.append(Segment(layer_id=f"affine{i}", offset=offset, length=length))
        offset += length
    return tuple(segments), f"affine{len(shapes) - 1}"


def init_params(arch: ArchitectureSpec) -> ParameterVector:
    """Glorot-uniform weights, zero biases, seeded by ``arch.seed``.

    The small init keeps a freshly initialized model near-uniform in its
    predictions, so margins start small and the suspicion gate only opens
    once training has actually sharpened the predictive distribution.
    """
    rng = np.random.default_rng(arch.seed)
    chunks = []
    for out_w, in_w in _layer_shapes(arch):
        limit = np.sqrt(6.0 / (in_w + out_w))
        w = rng.uniform(-limit, limit, size=(out_w, in_w))
        chunks.append(w.ravel())
        chunks.append(np.zeros(out_w))
    layout, top = _build_layout(arch)
    return ParameterVector(np.concatenate(chunks), layout, top, arch)


def _unpack(params: ParameterVector) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = []
    for seg, (out_w, in_w) in zip(params.layout, _layer_shapes(params.arch)):
        flat = params.values[seg.offset : seg.offset + seg.length]
        layers.append((flat[: out_w * in_w].reshape(out_w, in_w), flat[out_w * in_w :]))
    return layers


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(
    params: ParameterVector,
    X: np.ndarray,
    dropout_masks: Sequence[np.ndarray] | None = None,
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Batched forward pass; returns (logits, pre-activations, activations).

    ``activations[l]`` is the input of affine layer ``l`` (so activations[0]
    is X); dropout masks, when given, are applied to hidden activations.
    """
    layers = _unpack(params)
    activations = [X]
    pre = []
    h = X
    for l, (W, b) in enumerate(layers[:-1]):
        z = h @ W.T + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        if dropout_masks is not None:
            h = h * dropout_masks[l]
        activations.append(h)
    W, b = layers[-1]
    logits = h @ W.T + b
    return logits, pre, activations


def _check_input(params: ParameterVector, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.arch.input_dim,):
        raise DimensionMismatchError(
            f"input has shape {x.shape}, expected ({params.arch.input_dim},)"
        )
    return x


def _check_label(params: ParameterVector, y: int) -> int:
    if not (1 <= y <= params.arch.num_classes):
        raise ConfigurationError(f"label {y} outside [1, {params.arch.num_classes}]")
    return int(y)


def predict_proba(params: ParameterVector, x: np.ndarray) -> PredictiveDistribution:
    """Softmax of the final-layer logits; dropout is never applied here."""
    x = _check_input(params, x)
    logits, _, _ = _forward(params, x[None, :])
    return PredictiveDistribution(probs=_softmax(logits)[0])


def predict_proba_matrix(params: ParameterVector, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.arch.input_dim:
        raise DimensionMismatchError(f"feature matrix has shape {X.shape}")
    logits, _, _ = _forward(params, X)
    return _softmax(logits)


def predict_labels(params: ParameterVector, X: np.ndarray) -> np.ndarray:
    return np.argmax(predict_proba_matrix(params, X), axis=1) + 1


def _backprop_per_example(
    params: ParameterVector,
    pre: list[np.ndarray],
    activations: list[np.ndarray],
    delta_logits: np.ndarray,
) -> np.ndarray:
    """Per-example parameter gradients from per-example logit gradients.

    Returns an (n, num_params) matrix in flat layout order.
    """
    layers = _unpack(params)
    n = delta_logits.shape[0]
    grads: list[np.ndarray | None] = [None] * len(layers)
    delta = delta_logits
    for l in range(len(layers) - 1, -1, -1):
        h_in = activations[l]
        g_w = np.einsum("ni,nj->nij", delta, h_in).reshape(n, -1)
        grads[l] = np.concatenate([g_w, delta], axis=1)
        if l > 0:
            delta = (delta @ layers[l][0]) * (pre[l - 1] > 0.0)
    return np.concatenate(grads, axis=1)


def _mean_gradient(
    params: ParameterVector,
    pre: list[np.ndarray],
    activations: list[np.ndarray],
    delta_logits: np.ndarray,
    dropout_masks: Sequence[np.ndarray] | None = None,
) -> np.ndarray:
    """Mean-over-batch gradient; summation order fixed by matrix products."""
    layers = _unpack(params)
    n = delta_logits.shape[0]
    chunks: list[np.ndarray | None] = [None] * len(layers)
    delta = delta_logits / n
    for l in range(len(layers) - 1, -1, -1):
        h_in = activations[l]
        g_w = delta.T @ h_in
        chunks[l] = np.concatenate([g_w.ravel(), delta.sum(axis=0)])
        if l > 0:
            delta = (delta @ layers[l][0]) * (pre[l - 1] > 0.0)
            if dropout_masks is not None:
                delta = delta * dropout_masks[l - 1]
    return np.concatenate(chunks)


def loss_and_gradient(params: ParameterVector, x: np.ndarray, y: int) -> tuple[float, np.ndarray]:
    """Cross-entropy loss of one example and its gradient in parameter space."""
    x = _check_input(params, x)
    y = _check_label(params, y)
    logits, pre, acts = _forward(params, x[None, :])
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -log_probs[0, y - 1]
    probs = np.exp(log_probs)
    delta = probs.copy()
    delta[0, y - 1] -= 1.0
    grad = _backprop_per_example(params, pre, acts, delta)[0]
    return float(loss), grad


def prob_gradient(params: ParameterVector, x: np.ndarray, y: int) -> np.ndarray:
    """Gradient of the class probability itself (not its log).

    Computed by backpropagating the softmax Jacobian row directly, which is
    an independent path from ``loss_and_gradient``; the two are linked by the
    identity ``grad P = -P * grad loss``.
    """
    x = _check_input(params, x)
    y = _check_label(params, y)
    logits, pre, acts = _forward(params, x[None, :])
    probs = _softmax(logits)
    p_y = probs[0, y - 1]
    delta = -p_y * probs
    delta[0, y - 1] += p_y
    return _backprop_per_example(params, pre, acts, delta)[0]


def per_example_loss_gradients(
    params: ParameterVector, X: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Loss gradients of each example as rows of an (n, num_params) matrix."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    logits, pre, acts = _forward(params, X)
    probs = _softmax(logits)
    delta = probs.copy()
    delta[np.arange(len(y)), y - 1] -= 1.0
    return _backprop_per_example(params, pre, acts, delta)


def per_example_class_gradients(
    params: ParameterVector, X: np.ndarray, label: int
) -> np.ndarray:
    """Per-example gradients of ``log P(label | x)``, one fixed label for all rows."""
    X = np.asarray(X, dtype=np.float64)
    logits, pre, acts = _forward(params, X)
    probs = _softmax(logits)
    delta = -probs
    delta[:, label - 1] += 1.0
    return _backprop_per_example(params, pre, acts, delta)


def mean_loss_and_gradient(
    params: ParameterVector,
    X: np.ndarray,
    y: np.ndarray,
    dropout_masks: Sequence[np.ndarray] | None = None,
) -> tuple[float, np.ndarray]:
    logits, pre, acts = _forward(params, X, dropout_masks)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = X.shape[0]
    loss = -log_probs[np.arange(n), y - 1].mean()
    delta = np.exp(log_probs)
    delta[np.arange(n), y - 1] -= 1.0
    return float(loss), _mean_gradient(params, pre, acts, delta, dropout_masks)


def mean_loss(params: ParameterVector, X: np.ndarray, y: np.ndarray) -> float:
    logits, _, _ = _forward(params, X)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(X.shape[0]), y - 1].mean())


def hvp(params: ParameterVector, X: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Product of the mean-loss Hessian with ``v``.

    Exact for linear-softmax (the logits are linear in the parameters, so
    the Gauss-Newton term is the whole Hessian).  For the MLP, a symmetric
    finite difference of the analytic gradient with step 1e-4 / ||v||.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise DimensionMismatchError("hvp needs a non-empty vector")
    if v.shape != (params.size,):
        raise DimensionMismatchError(f"v has shape {v.shape}, expected ({params.size},)")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(v)

    if params.arch.kind == "linear-softmax":
        (W, b), = _unpack(params)
        c, d = W.shape
        Vw = v[: c * d].reshape(c, d)
        vb = v[c * d :]
        probs = predict_proba_matrix(params, X)
        dlogits = X @ Vw.T + vb
        t = probs * dlogits - probs * np.sum(probs * dlogits, axis=1, keepdims=True)
        n = X.shape[0]
        hw = t.T @ X / n
        hb = t.mean(axis=0)
        return np.concatenate([hw.ravel(), hb])

    eps = 1e-4 / norm
    _, g_plus = mean_loss_and_gradient(params.with_values(params.values + eps * v), X, y)
    _, g_minus = mean_loss_and_gradient(params.with_values(params.values - eps * v), X, y)
    return (g_plus - g_minus) / (2.0 * eps)


def accuracy(params: ParameterVector, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict_labels(params, X) == y))


def fit(dataset: ExampleSet, arch: ArchitectureSpec, cfg: TrainConfig) -> ParameterVector:
    """Minimize mean cross-entropy with mini-batch Adam.

    Deterministic given dataset order and the two seeds (init from
    ``arch.seed``, shuffling and dropout from ``cfg.seed``).  Training stops
    at the end of the first epoch whose full-train accuracy reaches the
    early-stop threshold.
    """
    if len(dataset) == 0:
        raise ConfigurationError("cannot fit on an empty dataset")
    if dataset.feature_dim != arch.input_dim:
        raise ConfigurationError(
            f"dataset has {dataset.feature_dim} features, architecture expects {arch.input_dim}"
        )
    if dataset.num_classes != arch.num_classes:
        raise ConfigurationError(
            f"dataset has {dataset.num_classes} classes, architecture expects {arch.num_classes}"
        )
    X, y = dataset.model_view()
    n = X.shape[0]
    stop_at = cfg.resolved_early_stop(arch)

    params = init_params(arch)
    theta = np.array(params.values)
    m = np.zeros_like(theta)
    s = np.zeros_like(theta)
    rng = np.random.default_rng(cfg.seed)
    hidden = arch.hidden_dims
    keep = 1.0 - arch.dropout_rate
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            masks = None
            if arch.dropout_rate > 0.0 and hidden:
                masks = [
                    (rng.random((len(idx), h)) < keep).astype(np.float64) / keep
                    for h in hidden
                ]
            loss, grad = mean_loss_and_gradient(
                params.with_values(theta), X[idx], y[idx], masks
            )
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise NumericDivergenceError("training loss diverged", index=epoch)
            step += 1
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
            s = cfg.beta2 * s + (1.0 - cfg.beta2) * grad * grad
            m_hat = m / (1.0 - cfg.beta1**step)
            s_hat = s / (1.0 - cfg.beta2**step)
            theta = theta - cfg.learning_rate * m_hat / (np.sqrt(s_hat) + cfg.adam_eps)
        if stop_at is not None and accuracy(params.with_values(theta), X, y) >= stop_at:
            break
    return params.with_values(theta)
