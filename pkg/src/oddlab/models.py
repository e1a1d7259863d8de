"""Tiny differentiable classifiers with hand-written backprop.

Three families:
  LinearModel     - f(x) = w.x, trained with the logistic loss on +-1 labels
  MlpModel        - ReLU hidden layers and a final affine `fc` layer
  HomogeneousNet  - bias-free layers with activation max(z, 0)**p

All models expose a flat parameter vector (`params` / `with_params`) so the
optimizer does not need to know the architecture.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from oddlab.errors import DegenerateOutput, DimMismatch, SchemaError

CHECKPOINT_SCHEMA = 1


# ---------------------------------------------------------------- losses


def softplus(z):
    """ln(1 + e^z) without overflow."""
    return np.logaddexp(0.0, z)


def logistic_loss(margins):
    """ln(1 + exp(-m)) elementwise for margins m = y w.x."""
    return softplus(-np.asarray(margins, dtype=np.float64))


def cross_entropy(logits, y):
    """Per-row loss -z[y] + logsumexp(z) and its gradient softmax(z) - onehot(y).

    logits: (B, K) or (K,); y: class ids of matching leading shape.
    """
    z = np.asarray(logits, dtype=np.float64)
    squeeze = z.ndim == 1
    z = np.atleast_2d(z)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape[0] != z.shape[0]:
        raise DimMismatch("one label per logit row expected")
    if np.any(y < 0) or np.any(y >= z.shape[1]):
        raise DimMismatch(f"label outside 0..{z.shape[1] - 1}")
    rows = np.arange(z.shape[0])
    # work relative to the target logit so that tiny losses and the target
    # gradient entry (-sum of the other probabilities) keep full precision
    dz = z - z[rows, y][:, None]
    others = np.exp(dz - np.maximum(dz.max(axis=1, keepdims=True), 0.0))
    others[rows, y] = 0.0
    top = np.maximum(dz.max(axis=1), 0.0)
    s = others.sum(axis=1)
    loss = np.where(top > 0, top + np.log(np.exp(-top) + s), np.log1p(s))
    denom = np.exp(-top) + s  # sum of exp(dz - top) including the target
    grad = others / denom[:, None]
    grad[rows, y] = -s / denom
    if squeeze:
        return loss[0], grad[0]
    return loss, grad


def _check_input(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dim:
        raise DimMismatch(f"input dim {x.shape[-1]} != model dim {dim}")
    return x


# ---------------------------------------------------------------- linear


@dataclass(frozen=True, eq=False)
class LinearModel:
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).ravel()
        if not np.all(np.isfinite(w)):
            raise ValueError("non-finite weights")
        object.__setattr__(self, "w", w)

    kind = "linear"

    @classmethod
    def zeros(cls, d):
        return cls(np.zeros(d))

    @property
    def params(self):
        return self.w.copy()

    def with_params(self, p):
        return LinearModel(p)

    def forward(self, x):
        x = _check_input(x, self.w.size)
        return np.atleast_1d(x @ self.w) if x.ndim == 1 else (x @ self.w)[:, None]

    def margins(self, X, labels):
        """y_i w.x_i with class ids mapped to +-1."""
        s = 2.0 * np.asarray(labels) - 1.0
        return s * (_check_input(X, self.w.size) @ self.w)

    def per_example_losses(self, X, labels):
        return logistic_loss(self.margins(X, labels))

    def loss_grad(self, X, labels, reduction="sum"):
        """Total (or mean) logistic loss and its gradient."""
        X = _check_input(X, self.w.size)
        s = 2.0 * np.asarray(labels) - 1.0
        m = s * (X @ self.w)
        losses = logistic_loss(m)
        coef = -s * expit(-m)
        g = X.T @ coef
        if reduction == "mean":
            return losses.mean(), g / len(m)
        return losses.sum(), g

    def predict(self, X):
        return (np.asarray(X) @ self.w > 0).astype(np.int64)

    def to_dict(self):
        return {"kind": "linear", "w": self.w.tolist()}


def logistic_loss_grad(model: LinearModel, x, y):
    """Loss ln(1 + exp(-y w.x)) and gradient -y sigmoid(-y w.x) x, for y = +-1."""
    if y not in (-1, 1):
        raise ValueError("y must be +1 or -1")
    x = _check_input(x, model.w.size)
    m = y * float(x @ model.w)
    return float(softplus(-m)), -y * expit(-m) * x


# ---------------------------------------------------------------- MLP


def _init_layers(rng, sizes, bias=True):
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in)
        layers.append((W, np.zeros(fan_out)) if bias else W)
    return layers


@dataclass(frozen=True, eq=False)
class MlpModel:
    """ReLU network; the last (W, b) pair is the fc head."""

    layers: tuple

    kind = "mlp"

    def __post_init__(self):
        layers = tuple((np.array(W, dtype=np.float64), np.array(b, dtype=np.float64))
                       for W, b in self.layers)
        for (W0, _), (W1, _) in zip(layers[:-1], layers[1:]):
            if W1.shape[1] != W0.shape[0]:
                raise DimMismatch(f"layer dims {W0.shape} -> {W1.shape} do not chain")
        for W, b in layers:
            if b.shape != (W.shape[0],):
                raise DimMismatch("bias length must match layer output")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def init(cls, sizes, seed):
        rng = np.random.default_rng(seed)
        return cls(tuple(_init_layers(rng, sizes)))

    @property
    def sizes(self):
        return [self.layers[0][0].shape[1]] + [W.shape[0] for W, _ in self.layers]

    @property
    def num_classes(self):
        return self.layers[-1][0].shape[0]

    @property
    def fc(self):
        W, b = self.layers[-1]
        return W.copy(), b.copy()

    @property
    def params(self):
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in self.layers])

    def with_params(self, p):
        out, k = [], 0
        for W, b in self.layers:
            nW = W.size
            out.append((p[k:k + nW].reshape(W.shape), p[k + nW:k + nW + b.size].copy()))
            k += nW + b.size
        if k != p.size:
            raise DimMismatch("parameter vector has the wrong length")
        return MlpModel(tuple(out))

    def _forward(self, X):
        acts = [X]
        h = X
        for li, (W, b) in enumerate(self.layers):
            z = h @ W.T + b
            h = z if li == len(self.layers) - 1 else np.maximum(z, 0.0)
            acts.append(h)
        return acts

    def forward(self, x):
        x = _check_input(x, self.sizes[0])
        return self._forward(np.atleast_2d(x))[-1][0] if x.ndim == 1 else self._forward(x)[-1]

    def per_example_losses(self, X, labels):
        return cross_entropy(self.forward(np.atleast_2d(X)), labels)[0]

    def loss_grad(self, X, labels, reduction="sum"):
        X = _check_input(np.atleast_2d(X), self.sizes[0])
        acts = self._forward(X)
        losses, delta = cross_entropy(acts[-1], labels)
        if reduction == "mean":
            delta = delta / X.shape[0]
        grads = []
        for li in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[li]
            h_in = acts[li]
            grads.append((delta.T @ h_in, delta.sum(axis=0)))
            if li > 0:
                delta = (delta @ W) * (acts[li] > 0)
        grads.reverse()
        flat = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])
        total = losses.mean() if reduction == "mean" else losses.sum()
        return total, flat

    def predict(self, X):
        return np.argmax(self.forward(np.atleast_2d(X)), axis=1)

    def to_dict(self):
        return {"kind": "mlp",
                "layers": [{"weight": W.tolist(), "bias": b.tolist()} for W, b in self.layers]}


# ---------------------------------------------------------------- homogeneous


def _pow_relu(z, p):
    return np.where(z > 0, np.maximum(z, 0.0) ** p, 0.0)


def _pow_relu_grad(z, p):
    # derivative at z <= 0 is taken as 0 (continuous since p > 1)
    return np.where(z > 0, p * np.maximum(z, 0.0) ** (p - 1.0), 0.0)


@dataclass(frozen=True, eq=False)
class HomogeneousNet:
    """Bias-free network x -> W_L s(... s(W_1 x)) with s(z) = max(z, 0)**p.

    Scaling every weight by c scales the output by c**a where a follows the
    recursion a_1 = 1, a_l = 1 + p * a_{l-1}; `check_homogeneity` measures it.
    """

    weights: tuple
    exponent: float = 1.01

    kind = "homogeneous"

    def __post_init__(self):
        ws = tuple(np.array(W, dtype=np.float64) for W in self.weights)
        for W0, W1 in zip(ws[:-1], ws[1:]):
            if W1.shape[1] != W0.shape[0]:
                raise DimMismatch(f"layer dims {W0.shape} -> {W1.shape} do not chain")
        object.__setattr__(self, "weights", ws)

    @classmethod
    def init(cls, sizes, seed, exponent=1.01):
        rng = np.random.default_rng(seed)
        return cls(tuple(_init_layers(rng, sizes, bias=False)), exponent)

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def num_classes(self):
        return self.weights[-1].shape[0]

    @property
    def nominal_degree(self):
        a = 1.0
        for _ in self.weights[1:]:
            a = 1.0 + self.exponent * a
        return a

    @property
    def num_params(self):
        return sum(W.size for W in self.weights)

    @property
    def params(self):
        return np.concatenate([W.ravel() for W in self.weights])

    def with_params(self, p):
        out, k = [], 0
        for W in self.weights:
            out.append(p[k:k + W.size].reshape(W.shape))
            k += W.size
        if k != p.size:
            raise DimMismatch("parameter vector has the wrong length")
        return HomogeneousNet(tuple(out), self.exponent)

    def _forward(self, X):
        pre, post = [], [X]
        h = X
        for li, W in enumerate(self.weights):
            z = h @ W.T
            pre.append(z)
            h = z if li == len(self.weights) - 1 else _pow_relu(z, self.exponent)
            post.append(h)
        return pre, post

    def forward(self, x):
        x = _check_input(x, self.sizes[0])
        out = self._forward(np.atleast_2d(x))[1][-1]
        return out[0] if x.ndim == 1 else out

    def _backward(self, pre, post, delta):
        """Backprop output-space deltas (B, K) into summed weight gradients."""
        grads = [None] * len(self.weights)
        for li in range(len(self.weights) - 1, -1, -1):
            grads[li] = delta.T @ post[li]
            if li > 0:
                delta = (delta @ self.weights[li]) * _pow_relu_grad(pre[li - 1], self.exponent)
        return np.concatenate([g.ravel() for g in grads])

    def per_example_losses(self, X, labels):
        return cross_entropy(self.forward(np.atleast_2d(X)), labels)[0]

    def loss_grad(self, X, labels, reduction="sum"):
        X = _check_input(np.atleast_2d(X), self.sizes[0])
        pre, post = self._forward(X)
        losses, delta = cross_entropy(post[-1], labels)
        if reduction == "mean":
            delta = delta / X.shape[0]
            return losses.mean(), self._backward(pre, post, delta)
        return losses.sum(), self._backward(pre, post, delta)

    def predict(self, X):
        return np.argmax(self.forward(np.atleast_2d(X)), axis=1)

    def to_dict(self):
        return {"kind": "homogeneous", "exponent": self.exponent,
                "weights": [W.tolist() for W in self.weights]}


def cross_entropy_loss_grad(model, x, y, wrt="logits"):
    """Cross-entropy of one example; gradient over logits or over all params."""
    if wrt == "logits":
        return cross_entropy(model.forward(x), y)
    if wrt == "params":
        loss, g = model.loss_grad(np.atleast_2d(x), np.atleast_1d(y))
        return float(loss), g
    raise ValueError("wrt must be 'logits' or 'params'")


@dataclass(frozen=True)
class PerExampleGradient:
    i: int
    j: int
    grad: np.ndarray


def per_example_class_gradients(model: HomogeneousNet, X) -> list[PerExampleGradient]:
    """Gradient of every logit f(x_i)[j] with respect to all weights."""
    X = _check_input(np.atleast_2d(X), model.sizes[0])
    K = model.num_classes
    out = []
    for i in range(X.shape[0]):
        pre, post = model._forward(X[i:i + 1])
        for j in range(K):
            e = np.zeros((1, K))
            e[0, j] = 1.0
            out.append(PerExampleGradient(i, j, model._backward(pre, post, e)))
    return out


def gradient_matrix(grads: list[PerExampleGradient]) -> np.ndarray:
    """Stack gradients as columns, ordered (i, j) row-major."""
    return np.stack([g.grad for g in grads], axis=1)


@dataclass(frozen=True)
class HomogeneityReport:
    degree: float
    max_rel_deviation: float
    per_scale_degree: dict


def check_homogeneity(model, x, scales=(0.5, 2.0, 4.0)) -> HomogeneityReport:
    """Measure a in f(c w) = c**a f(w) by a log-log fit over the scales."""
    base = np.atleast_1d(model.forward(x))
    nb = np.linalg.norm(base)
    if not nb > 1e-12:
        raise DegenerateOutput("model output is (numerically) zero at this input")
    w = model.params
    cs = [c for c in scales if c != 1.0]
    logs_c, logs_r, outs = [0.0], [0.0], {}
    for c in cs:
        out = np.atleast_1d(model.with_params(c * w).forward(x))
        outs[c] = out
        logs_c.append(math.log(c))
        logs_r.append(math.log(np.linalg.norm(out) / nb))
    lc, lr = np.array(logs_c), np.array(logs_r)
    a = float(np.dot(lc - lc.mean(), lr - lr.mean()) / np.dot(lc - lc.mean(), lc - lc.mean()))
    per_scale = {c: math.log(np.linalg.norm(outs[c]) / nb) / math.log(c) for c in cs}
    dev = max(np.linalg.norm(outs[c] - c ** a * base) / (c ** a * nb) for c in cs)
    return HomogeneityReport(a, float(dev), per_scale)


# ---------------------------------------------------------------- checkpoints


def model_from_dict(d):
    kind = d.get("kind")
    if kind == "linear":
        return LinearModel(np.array(d["w"], dtype=np.float64))
    if kind == "mlp":
        return MlpModel(tuple((np.array(L["weight"]), np.array(L["bias"])) for L in d["layers"]))
    if kind == "homogeneous":
        return HomogeneousNet(tuple(np.array(W) for W in d["weights"]), float(d["exponent"]))
    raise SchemaError(f"unknown model kind {kind!r}")


def checkpoint_text(model) -> str:
    payload = {"schema_version": CHECKPOINT_SCHEMA, "model": model.to_dict()}
    return json.dumps(payload, sort_keys=True)


def save_checkpoint(model, path) -> None:
    Path(path).write_text(checkpoint_text(model), encoding="utf-8")


def load_checkpoint(path):
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    if payload.get("schema_version") != CHECKPOINT_SCHEMA:
        raise SchemaError(f"{path}: unsupported schema_version {payload.get('schema_version')!r}")
    return model_from_dict(payload["model"])
