"""Dense classifier with a hand-written reverse pass, float64 throughout.

The network is a plain MLP: hidden layers with tanh or relu activations,
then a linear classifying head. Everything up to and including the last
hidden layer is the feature extractor; it is exposed separately so
feature-space penalties can be pushed back into the parameters alongside the
cross-entropy term in a single backward sweep.

All parameters live in one flat float64 vector laid out layer by layer as
weight matrix (row-major, in x out) then bias, with the head last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("tanh", "relu")


class ShapeMismatch(ValueError):
    """Input, feature, or parameter dimensions disagree with the model spec."""


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if len(self.hidden_dims) < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be a nonempty tuple of positive ints, got {self.hidden_dims}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def feature_dim(self) -> int:
        return self.hidden_dims[-1]


@dataclass(frozen=True)
class FeatureBatch:
    """Last-hidden-layer activations (rows) with the batch's labels."""

    z: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class ForwardTape:
    """Intermediates of one feature forward pass.

    acts[0] is the input batch; acts[l] (l >= 1) the activation output of
    hidden layer l; pres[l-1] its pre-activation. The feature batch is
    acts[-1].
    """

    acts: tuple[np.ndarray, ...]
    pres: tuple[np.ndarray, ...]


def layer_shapes(spec: ModelSpec) -> list[tuple[int, int]]:
    """(fan_in, fan_out) of every layer including the classifying head."""
    dims = [spec.input_dim, *spec.hidden_dims]
    shapes = [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
    shapes.append((spec.feature_dim, spec.num_classes))
    return shapes


def param_count(spec: ModelSpec) -> int:
    return sum((fi + 1) * fo for fi, fo in layer_shapes(spec))


def unflatten(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of the flat vector as (weight, bias) pairs, head last. No copies."""
    if params.shape != (param_count(spec),):
        raise ShapeMismatch(f"expected {param_count(spec)} parameters, got shape {params.shape}")
    out = []
    pos = 0
    for fi, fo in layer_shapes(spec):
        w = params[pos: pos + fi * fo].reshape(fi, fo)
        pos += fi * fo
        b = params[pos: pos + fo]
        pos += fo
        out.append((w, b))
    return out


def flatten(layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    return np.concatenate(parts)


def init_params(spec: ModelSpec, seed) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer, weights then bias."""
    rng = np.random.default_rng(seed)
    parts = []
    for fi, fo in layer_shapes(spec):
        bound = 1.0 / np.sqrt(fi)
        parts.append(rng.uniform(-bound, bound, fi * fo))
        parts.append(rng.uniform(-bound, bound, fo))
    return np.concatenate(parts)


def _act(spec: ModelSpec, s: np.ndarray) -> np.ndarray:
    if spec.activation == "tanh":
        return np.tanh(s)
    return np.maximum(s, 0.0)


def _act_deriv(spec: ModelSpec, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if spec.activation == "tanh":
        return 1.0 - post * post
    return (pre > 0.0).astype(np.float64)


def forward_features(spec: ModelSpec, params: np.ndarray, x: np.ndarray,
                     labels: np.ndarray | None = None) -> tuple[FeatureBatch, ForwardTape]:
    """Run the feature extractor on a batch. Pure; repeated calls are bitwise equal."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeMismatch(f"batch shape {x.shape} does not match input_dim {spec.input_dim}")
    layers = unflatten(spec, params)
    acts = [x]
    pres = []
    a = x
    for w, b in layers[:-1]:
        s = a @ w + b
        pres.append(s)
        a = _act(spec, s)
        acts.append(a)
    fb = FeatureBatch(a, labels if labels is not None else np.zeros(len(x), dtype=np.int64))
    return fb, ForwardTape(tuple(acts), tuple(pres))


def forward_logits(spec: ModelSpec, params: np.ndarray, features: FeatureBatch) -> np.ndarray:
    z = features.z
    if z.ndim != 2 or z.shape[1] != spec.feature_dim:
        raise ShapeMismatch(f"feature shape {z.shape} does not match feature_dim {spec.feature_dim}")
    wh, bh = unflatten(spec, params)[-1]
    return z @ wh + bh


def _softmax_ce(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and d(loss)/d(logits), stabilized by max subtraction."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    expo = np.exp(shifted)
    denom = expo.sum(axis=1, keepdims=True)
    logp = shifted - np.log(denom)
    loss = float(-logp[np.arange(n), labels].mean())
    dlogits = expo / denom
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def _phi_backward(spec: ModelSpec, layers, tape: ForwardTape,
                  upstream: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Backpropagate d(loss)/d(features) through the hidden stack.

    Returns (dW, db) per hidden layer, first layer first.
    """
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * (len(layers) - 1)
    d = upstream
    for l in range(len(layers) - 2, -1, -1):
        ds = d * _act_deriv(spec, tape.pres[l], tape.acts[l + 1])
        grads[l] = (tape.acts[l].T @ ds, ds.sum(axis=0))
        if l > 0:
            d = ds @ layers[l][0].T
    return grads


def ce_grad_from_tape(spec: ModelSpec, params: np.ndarray, tape: ForwardTape,
                      labels: np.ndarray, feature_upstream: np.ndarray | None = None
                      ) -> tuple[float, np.ndarray, np.ndarray]:
    """Cross-entropy loss and full-parameter gradient from a recorded forward pass.

    feature_upstream, when given, is an extra d(penalty)/d(features) term that
    joins the cross-entropy signal at the feature layer, so the whole gradient
    costs one backward sweep. Returns (loss, grad, logits).
    """
    layers = unflatten(spec, params)
    z = tape.acts[-1]
    wh, bh = layers[-1]
    logits = z @ wh + bh
    loss, dlogits = _softmax_ce(logits, labels)
    gwh = z.T @ dlogits
    gbh = dlogits.sum(axis=0)
    dz = dlogits @ wh.T
    if feature_upstream is not None:
        if feature_upstream.shape != z.shape:
            raise ShapeMismatch(f"upstream shape {feature_upstream.shape} does not match features {z.shape}")
        dz = dz + feature_upstream
    grads = _phi_backward(spec, layers, tape, dz)
    grads.append((gwh, gbh))
    return loss, flatten(grads), logits


def ce_loss_grad(spec: ModelSpec, params: np.ndarray, x: np.ndarray,
                 labels: np.ndarray) -> tuple[float, np.ndarray, FeatureBatch]:
    """Mean softmax cross-entropy on a batch with its full-parameter gradient."""
    fb, tape = forward_features(spec, params, x, labels)
    loss, grad, _ = ce_grad_from_tape(spec, params, tape, labels)
    return loss, grad, fb


def feature_jvp_grad(spec: ModelSpec, params: np.ndarray, tape: ForwardTape,
                     upstream: np.ndarray) -> np.ndarray:
    """Pull a d(loss)/d(features) matrix back to parameter space.

    The head never influences the features, so its slots stay zero. Linear in
    upstream.
    """
    z = tape.acts[-1]
    if upstream.shape != z.shape:
        raise ShapeMismatch(f"upstream shape {upstream.shape} does not match features {z.shape}")
    layers = unflatten(spec, params)
    grads = _phi_backward(spec, layers, tape, upstream)
    fi, fo = layer_shapes(spec)[-1]
    grads.append((np.zeros((fi, fo)), np.zeros(fo)))
    return flatten(grads)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=1) == labels).mean())


def save_params(params: np.ndarray, path: str) -> None:
    """Checkpoint a flat parameter vector; .csv gets one value per line, else .npy."""
    if path.endswith(".csv"):
        np.savetxt(path, params, delimiter=",")
    else:
        np.save(path, params)


def load_params(path: str) -> np.ndarray:
    if path.endswith(".csv"):
        return np.loadtxt(path, delimiter=",", dtype=np.float64).reshape(-1)
    return np.load(path)


def forward_feature_macs(spec: ModelSpec, rows: int) -> int:
    """Multiply-accumulate count of one feature forward pass on `rows` samples."""
    dims = [spec.input_dim, *spec.hidden_dims]
    return rows * sum(dims[i] * dims[i + 1] for i in range(len(dims) - 1))


def head_macs(spec: ModelSpec, rows: int) -> int:
    return rows * spec.feature_dim * spec.num_classes


def backward_macs(spec: ModelSpec, rows: int) -> int:
    """Multiply-accumulate count of one full backward sweep.

    Each layer costs one weight-gradient product and, except for the first
    hidden layer, one signal propagation product; the head costs both.
    """
    first = rows * spec.input_dim * spec.hidden_dims[0]
    return 2 * head_macs(spec, rows) + 2 * forward_feature_macs(spec, rows) - first
