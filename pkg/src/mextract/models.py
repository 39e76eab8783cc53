"""Trainable classifiers: softmax regression and small dense MLPs.

Models are plain numpy parameter lists with hand-written forward and
backward passes. Training ops return a new ``Model``; a returned model is
never mutated afterwards, so read-only sharing across threads is safe.

Weight convention: layer ``l`` maps activations ``a`` to ``a @ W[l] + b[l]``
with ``W[l]`` shaped (fan_in, fan_out). The final layer produces logits fed
through a row-wise softmax.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .mathcore import Q_CLAMP, entropy_rows, softmax_rows

KINDS = ("softmax-regression", "mlp")
ACTIVATIONS = ("relu", "tanh")

_MAGIC = b"MEXTMODL"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor: kind, dimensions, hidden layout, activation."""

    kind: str
    input_dim: int
    num_classes: int
    hidden_sizes: tuple[int, ...] = ()
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        if self.kind == "softmax-regression" and self.hidden_sizes:
            raise ValueError("softmax-regression takes no hidden layers")
        if self.kind == "mlp" and not self.hidden_sizes:
            raise ValueError("mlp needs at least one hidden layer")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_sizes, self.num_classes)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "hidden_sizes": list(self.hidden_sizes),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            kind=d["kind"],
            input_dim=int(d["input_dim"]),
            num_classes=int(d["num_classes"]),
            hidden_sizes=tuple(d.get("hidden_sizes", ())),
            activation=d.get("activation", "relu"),
        )


@dataclass
class Model:
    """A parameter set for a ``ModelSpec`` plus the seed it was born from."""

    spec: ModelSpec
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)
    rng_seed: int = 0

    def copy(self) -> "Model":
        return Model(
            spec=self.spec,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            rng_seed=self.rng_seed,
        )


def init_model(spec: ModelSpec, seed: int) -> Model:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Model(spec=spec, weights=weights, biases=biases, rng_seed=int(seed))


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: np.ndarray, activation: str) -> np.ndarray:
    # relu kink convention: subgradient 0 at z == 0.
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def _forward_cached(model: Model, X: np.ndarray):
    """Forward pass keeping pre-activations and activations for backprop.

    Returns (probs, pre_activations, activations) where activations[0] is
    the input batch and activations[l] feeds layer l.
    """
    acts = [X]
    pres = []
    a = X
    n_layers = len(model.weights)
    for l in range(n_layers):
        z = a @ model.weights[l] + model.biases[l]
        pres.append(z)
        if l < n_layers - 1:
            a = _activate(z, model.spec.activation)
            acts.append(a)
    probs = softmax_rows(pres[-1])
    return probs, pres, acts


def _check_batch(model: Model, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.spec.input_dim:
        raise ValueError(
            f"expected (n, {model.spec.input_dim}) inputs, got shape {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("inputs contain non-finite entries")
    return X


def forward(model: Model, x) -> np.ndarray:
    """Predicted class distribution for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a flat input vector, got shape {x.shape}")
    return forward_batch(model, x[np.newaxis, :])[0]


def forward_batch(model: Model, X) -> np.ndarray:
    """Predicted class distributions for an (n, d) batch, one row each."""
    X = _check_batch(model, X)
    probs, _, _ = _forward_cached(model, X)
    return probs


def predict_labels(model: Model, X) -> np.ndarray:
    """Argmax labels for a batch (ties toward the lowest class index)."""
    return np.argmax(forward_batch(model, X), axis=1)


def _loss_gradients(model: Model, X: np.ndarray, y_onehot: np.ndarray):
    """Mean cross-entropy gradients over a batch, by backprop.

    Returns (grad_weights, grad_biases, mean_loss).
    """
    probs, pres, acts = _forward_cached(model, X)
    n = X.shape[0]
    clamped = np.maximum(probs, Q_CLAMP)
    mean_loss = float(-(y_onehot * np.log(clamped)).sum() / n)

    delta = (probs - y_onehot) / n
    grad_w = [None] * len(model.weights)
    grad_b = [None] * len(model.biases)
    for l in range(len(model.weights) - 1, -1, -1):
        grad_w[l] = acts[l].T @ delta
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * _activation_grad(
                pres[l - 1], model.spec.activation
            )
    return grad_w, grad_b, mean_loss


def _one_hot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((y.size, k))
    out[np.arange(y.size), y] = 1.0
    return out


def _check_labels(y, k: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be a flat vector")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    return y


def train(
    model: Model,
    X,
    y,
    epochs: int,
    lr: float,
    batch_size: int = 32,
    seed: int = 0,
) -> Model:
    """Mini-batch SGD on cross-entropy against hard labels.

    Training continues from the incoming parameters (no reinitialization);
    the per-epoch shuffle is deterministic in ``seed``. Returns a new model.
    """
    X = _check_batch(model, X)
    y = _check_labels(y, model.spec.num_classes)
    if X.shape[0] == 0 or X.shape[0] != y.size:
        raise ValueError("need a non-empty, aligned training set")
    out = model.copy()
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            yb = _one_hot(y[idx], model.spec.num_classes)
            gw, gb, _ = _loss_gradients(out, X[idx], yb)
            for l in range(len(out.weights)):
                out.weights[l] -= lr * gw[l]
                out.biases[l] -= lr * gb[l]
    return out


def _per_example_gradients(model: Model, X: np.ndarray, y_onehot: np.ndarray):
    """Per-example cross-entropy gradients, one flat list of blocks each."""
    grads = []
    for i in range(X.shape[0]):
        gw, gb, _ = _loss_gradients(model, X[i : i + 1], y_onehot[i : i + 1])
        grads.append((gw, gb))
    return grads


def dpsgd_train(
    model: Model,
    X,
    y,
    epochs: int,
    lr: float,
    clip_norm: float,
    noise_multiplier: float,
    batch_size: int = 32,
    seed: int = 0,
) -> Model:
    """DP-SGD: per-example gradients clipped to L2 norm ``clip_norm``, then
    Gaussian noise with per-coordinate std ``noise_multiplier * clip_norm``
    added to the clipped sum before averaging over the batch.

    With ``noise_multiplier == 0`` and a clip norm above every per-example
    gradient norm this reproduces ``train`` step for step (the shuffle
    stream is shared; noise uses an independent stream). Translating
    (clip_norm, noise_multiplier, epochs) into an epsilon guarantee is the
    caller's problem.
    """
    if clip_norm <= 0.0:
        raise ValueError("clip_norm must be positive")
    if noise_multiplier < 0.0:
        raise ValueError("noise_multiplier must be >= 0")
    X = _check_batch(model, X)
    y = _check_labels(y, model.spec.num_classes)
    if X.shape[0] == 0 or X.shape[0] != y.size:
        raise ValueError("need a non-empty, aligned training set")
    out = model.copy()
    shuffle_rng = np.random.default_rng(seed)
    noise_rng = np.random.default_rng([seed, 0x0D9])
    n = X.shape[0]
    for _ in range(epochs):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            yb = _one_hot(y[idx], model.spec.num_classes)
            per_ex = _per_example_gradients(out, X[idx], yb)

            sum_w = [np.zeros_like(w) for w in out.weights]
            sum_b = [np.zeros_like(b) for b in out.biases]
            for gw, gb in per_ex:
                sq = sum(float((g * g).sum()) for g in gw)
                sq += sum(float((g * g).sum()) for g in gb)
                norm = np.sqrt(sq)
                scale = min(1.0, clip_norm / norm) if norm > 0.0 else 1.0
                for l in range(len(sum_w)):
                    sum_w[l] += scale * gw[l]
                    sum_b[l] += scale * gb[l]
            m = len(per_ex)
            sigma = noise_multiplier * clip_norm
            for l in range(len(sum_w)):
                if sigma > 0.0:
                    sum_w[l] += noise_rng.normal(0.0, sigma, size=sum_w[l].shape)
                    sum_b[l] += noise_rng.normal(0.0, sigma, size=sum_b[l].shape)
                out.weights[l] -= lr * sum_w[l] / m
                out.biases[l] -= lr * sum_b[l] / m
    return out


def per_example_gradient_norms(model: Model, X, y, clip_norm: float | None = None) -> np.ndarray:
    """L2 norms of per-example loss gradients, optionally after clipping."""
    X = _check_batch(model, X)
    y = _check_labels(y, model.spec.num_classes)
    yb = _one_hot(y, model.spec.num_classes)
    norms = []
    for gw, gb in _per_example_gradients(model, X, yb):
        sq = sum(float((g * g).sum()) for g in gw) + sum(float((g * g).sum()) for g in gb)
        norm = float(np.sqrt(sq))
        if clip_norm is not None and norm > 0.0:
            norm *= min(1.0, clip_norm / norm)
        norms.append(norm)
    return np.asarray(norms)


def input_entropy_gradient(model: Model, x) -> np.ndarray:
    """Gradient of the prediction entropy H(forward(model, x)) w.r.t. x."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a flat input vector, got shape {x.shape}")
    return input_entropy_gradients(model, x[np.newaxis, :])[0]


def input_entropy_gradients(model: Model, X) -> np.ndarray:
    """Row-wise entropy input-gradients for an (n, d) batch.

    Uses dH/dz = -p * (ln p + H) at the logits (which sums to zero, as it
    must for a shift-invariant softmax) and backpropagates to the input.
    """
    X = _check_batch(model, X)
    probs, pres, _ = _forward_cached(model, X)
    h = entropy_rows(probs)
    logp = np.where(probs > 0.0, np.log(np.where(probs > 0.0, probs, 1.0)), 0.0)
    delta = np.where(probs > 0.0, -probs * (logp + h[:, np.newaxis]), 0.0)
    for l in range(len(model.weights) - 1, 0, -1):
        delta = (delta @ model.weights[l].T) * _activation_grad(
            pres[l - 1], model.spec.activation
        )
    return delta @ model.weights[0].T


def per_example_loss(model: Model, x, y: int) -> float:
    """Cross-entropy of the one-hot label ``y`` against forward(model, x)."""
    p = forward(model, x)
    if not 0 <= int(y) < model.spec.num_classes:
        raise ValueError(f"label {y} out of range for {model.spec.num_classes} classes")
    return float(-np.log(max(p[int(y)], Q_CLAMP)))


def per_example_losses(model: Model, X, y) -> np.ndarray:
    """Vector of per-example cross-entropy losses over a labeled batch."""
    X = _check_batch(model, X)
    y = _check_labels(y, model.spec.num_classes)
    probs = forward_batch(model, X)
    picked = np.maximum(probs[np.arange(y.size), y], Q_CLAMP)
    return -np.log(picked)


def parametric_fidelity(a: Model, b: Model) -> float:
    """ln of the L2 parameter distance between two same-spec models.

    Softmax regression compares every parameter; MLPs compare only the
    final layer. The distance is clamped below at 1e-12 so identical
    models map to ln(1e-12) instead of -inf.
    """
    if a.spec != b.spec:
        raise ValueError("parametric fidelity needs identical specs")
    if a.spec.kind == "softmax-regression":
        layers = range(len(a.weights))
    else:
        layers = [len(a.weights) - 1]
    sq = 0.0
    for l in layers:
        sq += float(((a.weights[l] - b.weights[l]) ** 2).sum())
        sq += float(((a.biases[l] - b.biases[l]) ** 2).sum())
    return float(np.log(max(np.sqrt(sq), 1e-12)))


def save_model(model: Model, path) -> None:
    """Write the binary container at ``path`` and a JSON sidecar at
    ``path + ".json"``.

    Container layout: 8 magic bytes, u32 LE format version, u32 LE header
    length, UTF-8 JSON header (spec, seed, block shapes), then each block's
    float64 little-endian row-major payload in order W0, b0, W1, b1, ...
    """
    path = str(path)
    blocks = []
    for w, b in zip(model.weights, model.biases):
        blocks.append(w)
        blocks.append(b)
    header = {
        "spec": model.spec.to_dict(),
        "rng_seed": model.rng_seed,
        "blocks": [list(blk.shape) for blk in blocks],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for blk in blocks:
            f.write(np.ascontiguousarray(blk, dtype="<f8").tobytes())
    with open(path + ".json", "w", encoding="utf-8") as f:
        json.dump(
            {"spec": model.spec.to_dict(), "rng_seed": model.rng_seed},
            f,
            indent=2,
            sort_keys=True,
        )
        f.write("\n")


def load_model(path) -> Model:
    """Load a model container written by ``save_model`` (bit-exact)."""
    path = str(path)
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad model container magic {magic!r}")
        version, header_len = struct.unpack("<II", f.read(8))
        if version != _FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        header = json.loads(f.read(header_len).decode("utf-8"))
        spec = ModelSpec.from_dict(header["spec"])
        blocks = []
        for shape in header["blocks"]:
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"{path}: truncated parameter block")
            blocks.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))
    weights = blocks[0::2]
    biases = blocks[1::2]
    expected = len(spec.layer_dims) - 1
    if len(weights) != expected or len(biases) != expected:
        raise ValueError(f"{path}: block count does not match spec")
    return Model(spec=spec, weights=weights, biases=biases, rng_seed=int(header["rng_seed"]))
