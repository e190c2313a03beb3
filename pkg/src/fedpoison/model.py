"""NCF scoring with a ReLU MLP, BCE loss and hand-written backprop.

Everything here is float64 numpy and works on batches: a batch is a set of
(user embedding, item) rows that share one copy of the global parameters.
Weights are stored input-major, so a layer computes ``x @ W + b``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LOGIT_CLAMP = 30.0


class EmptyLossWarning(UserWarning):
    """Raised (as a warning) when a loss is requested over zero pairs."""


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class HyperParams:
    embed_dim: int = 8
    layer_dims: tuple[int, ...] = (8, 8)
    learning_rate: float = 0.001

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(k) for k in self.layer_dims))
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be positive, got {self.embed_dim}")
        if not self.layer_dims or min(self.layer_dims) < 1:
            raise ValueError(f"layer_dims must be non-empty and positive, got {self.layer_dims}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")

    @property
    def input_dim(self) -> int:
        return 2 * self.embed_dim


@dataclass
class GlobalParams:
    """Server-side parameters: item embeddings, MLP weights/biases, output vector."""

    Q: np.ndarray
    h: np.ndarray
    W: list[np.ndarray]
    b: list[np.ndarray]

    @property
    def num_items(self) -> int:
        return self.Q.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.Q.shape[1]

    @property
    def num_layers(self) -> int:
        return len(self.W)

    def copy(self) -> "GlobalParams":
        return GlobalParams(
            self.Q.copy(), self.h.copy(), [w.copy() for w in self.W], [c.copy() for c in self.b]
        )

    def arrays(self) -> list[np.ndarray]:
        """Flat list of every array, in a fixed order (Q, h, W_1, b_1, ...)."""
        out = [self.Q, self.h]
        for w, c in zip(self.W, self.b):
            out += [w, c]
        return out

    def validate(self) -> None:
        d = self.embed_dim
        width = 2 * d
        if len(self.W) != len(self.b) or not self.W:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (w, c) in enumerate(zip(self.W, self.b), start=1):
            if w.shape[0] != width or c.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: W shape {w.shape} / b shape {c.shape} inconsistent")
            width = w.shape[1]
        if self.h.shape != (width,):
            raise ValueError(f"h has shape {self.h.shape}, expected ({width},)")
        for a in self.arrays():
            if not np.all(np.isfinite(a)):
                raise ValueError("parameters contain non-finite values")

    def equals(self, other: "GlobalParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass
class ForwardTape:
    items: np.ndarray
    x: np.ndarray
    z: list[np.ndarray]
    a: list[np.ndarray]
    logit: np.ndarray
    score: np.ndarray


@dataclass
class ModelGradients:
    """Per-row embedding gradients plus batch-summed shared gradients."""

    grad_p: np.ndarray
    grad_q: np.ndarray
    grad_h: np.ndarray
    grad_W: list[np.ndarray]
    grad_b: list[np.ndarray]


@dataclass
class GradientUpdate:
    """Gradient of the shared parameters as uploaded by one client.

    Item-embedding gradients are sparse: ``item_rows`` holds sorted unique
    item indices and ``item_grads`` the matching rows.
    """

    item_rows: np.ndarray
    item_grads: np.ndarray
    h: np.ndarray
    W: list[np.ndarray]
    b: list[np.ndarray]
    meta: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: GlobalParams) -> "GradientUpdate":
        return cls(
            np.zeros(0, dtype=np.int64),
            np.zeros((0, params.embed_dim)),
            np.zeros_like(params.h),
            [np.zeros_like(w) for w in params.W],
            [np.zeros_like(c) for c in params.b],
        )

    @classmethod
    def from_gradients(cls, grads: ModelGradients, items: np.ndarray) -> "GradientUpdate":
        rows, inverse = np.unique(np.asarray(items, dtype=np.int64), return_inverse=True)
        q = np.zeros((rows.size, grads.grad_q.shape[1]))
        np.add.at(q, inverse, grads.grad_q)
        return cls(rows, q, grads.grad_h, list(grads.grad_W), list(grads.grad_b))

    def scaled(self, alpha: float) -> "GradientUpdate":
        if alpha == 1.0:
            return self
        return GradientUpdate(
            self.item_rows,
            alpha * self.item_grads,
            alpha * self.h,
            [alpha * w for w in self.W],
            [alpha * c for c in self.b],
            dict(self.meta),
        )

    def arrays(self) -> list[np.ndarray]:
        out = [self.item_grads, self.h]
        for w, c in zip(self.W, self.b):
            out += [w, c]
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays())))

    def dense_items(self, num_items: int) -> np.ndarray:
        out = np.zeros((num_items, self.item_grads.shape[1]))
        out[self.item_rows] = self.item_grads
        return out


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def init_params(hyper: HyperParams, num_items: int, seed=None) -> GlobalParams:
    """Item embeddings ~ N(0, 0.01^2), Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    Q = rng.normal(0.0, 0.01, size=(num_items, hyper.embed_dim))
    W, b = [], []
    fan_in = hyper.input_dim
    for width in hyper.layer_dims:
        limit = np.sqrt(6.0 / (fan_in + width))
        W.append(rng.uniform(-limit, limit, size=(fan_in, width)))
        b.append(np.zeros(width))
        fan_in = width
    limit = np.sqrt(6.0 / (fan_in + 1))
    h = rng.uniform(-limit, limit, size=fan_in)
    return GlobalParams(Q, h, W, b)


def forward(p, item, params: GlobalParams):
    """Score user embedding(s) ``p`` against item(s) ``item``.

    ``p`` is ``(d,)`` or ``(B, d)``; ``item`` an int or ``(B,)`` array. A
    scalar item gives a float score, otherwise an array of scores. The tape
    is always batch-shaped.
    """
    scalar = np.ndim(item) == 0
    items = np.atleast_1d(np.asarray(item, dtype=np.int64))
    p = np.asarray(p, dtype=np.float64)
    if items.size and (items.min() < 0 or items.max() >= params.num_items):
        raise IndexError(f"item index out of range [0, {params.num_items})")
    if p.shape[-1] != params.embed_dim:
        raise ValueError(f"user embedding width {p.shape[-1]} != {params.embed_dim}")
    if not np.all(np.isfinite(p)):
        raise ValueError("user embedding contains non-finite values")
    P = np.broadcast_to(p, (items.size, params.embed_dim))
    x = np.concatenate([P, params.Q[items]], axis=1)
    zs, acts = [], []
    a = x
    for w, c in zip(params.W, params.b):
        z = a @ w + c
        a = np.maximum(z, 0.0)
        zs.append(z)
        acts.append(a)
    logit = np.clip(a @ params.h, -LOGIT_CLAMP, LOGIT_CLAMP)
    score = sigmoid(logit)
    tape = ForwardTape(items, x, zs, acts, logit, score)
    return (float(score[0]) if scalar else score), tape


def backward(tape: ForwardTape, dL_dscore, params: GlobalParams) -> ModelGradients:
    """Backpropagate ``dL/dscore`` (scalar or per-row) through the tape.

    The logit clamp is treated as the identity here so saturated targets
    still receive a gradient; within the clamp range this is exact.
    """
    if len(tape.z) != params.num_layers or tape.x.shape[1] != 2 * params.embed_dim:
        raise ValueError("tape does not match parameter shapes")
    s = tape.score
    dlogit = np.broadcast_to(np.asarray(dL_dscore, dtype=np.float64), s.shape) * s * (1.0 - s)
    last = tape.a[-1]
    grad_h = last.T @ dlogit
    delta = dlogit[:, None] * params.h[None, :]
    grad_W = [None] * params.num_layers
    grad_b = [None] * params.num_layers
    for k in range(params.num_layers - 1, -1, -1):
        # ReLU'(0) := 0
        delta = delta * (tape.z[k] > 0.0)
        inp = tape.a[k - 1] if k > 0 else tape.x
        grad_W[k] = inp.T @ delta
        grad_b[k] = delta.sum(axis=0)
        delta = delta @ params.W[k].T
    d = params.embed_dim
    return ModelGradients(delta[:, :d].copy(), delta[:, d:].copy(), grad_h, grad_W, grad_b)


def bce_loss(scores, labels=None) -> float:
    """Summed binary cross-entropy.

    Accepts either two arrays or a single sequence of ``(score, label)`` pairs.
    """
    if labels is None:
        pairs = list(scores)
        scores = [s for s, _ in pairs]
        labels = [y for _, y in pairs]
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.size == 0:
        warnings.warn("bce_loss over an empty pair list", EmptyLossWarning, stacklevel=2)
        return 0.0
    lo = sigmoid(-LOGIT_CLAMP)
    s = np.clip(s, lo, 1.0 - lo)
    return float(-np.sum(y * np.log(s) + (1.0 - y) * np.log1p(-s)))


def bce_grad(scores, labels) -> np.ndarray:
    """dL/dscore of :func:`bce_loss`, per pair."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return -y / s + (1.0 - y) / (1.0 - s)


def loss_and_gradients(p, items, labels, params: GlobalParams):
    """BCE loss of one user's pairs and its gradients (grad_p summed over rows)."""
    scores, tape = forward(p, np.asarray(items, dtype=np.int64), params)
    loss = bce_loss(scores, labels)
    grads = backward(tape, bce_grad(scores, labels), params)
    return loss, grads


def aggregate(updates: Sequence[GradientUpdate], params: GlobalParams) -> GradientUpdate:
    """Element-wise sum of uploads, accumulated in the order given."""
    total_q = np.zeros_like(params.Q)
    touched = np.zeros(params.num_items, dtype=bool)
    h = np.zeros_like(params.h)
    W = [np.zeros_like(w) for w in params.W]
    b = [np.zeros_like(c) for c in params.b]
    for up in updates:
        total_q[up.item_rows] += up.item_grads
        touched[up.item_rows] = True
        h += up.h
        for k in range(len(W)):
            W[k] += up.W[k]
            b[k] += up.b[k]
    rows = np.flatnonzero(touched)
    return GradientUpdate(rows, total_q[rows], h, W, b)


def apply_update(params: GlobalParams, total: GradientUpdate, lr: float) -> GlobalParams:
    """Return ``params - lr * total``; refuses non-finite gradients."""
    if not total.is_finite():
        raise NonFiniteGradientError("aggregated gradient contains non-finite entries; round aborted")
    new = params.copy()
    new.Q[total.item_rows] -= lr * total.item_grads
    new.h -= lr * total.h
    for k in range(new.num_layers):
        new.W[k] -= lr * total.W[k]
        new.b[k] -= lr * total.b[k]
    return new


def score_matrix(P: np.ndarray, params: GlobalParams, chunk: int = 128) -> np.ndarray:
    """Scores of every user row in ``P`` against every item, shape ``(U, M)``.

    The first layer is split into user and item halves so each chunk only
    materialises ``(chunk, M, width)``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    d = params.embed_dim
    W1, b1 = params.W[0], params.b[0]
    user_part = P @ W1[:d]
    item_part = params.Q @ W1[d:] + b1
    out = np.empty((P.shape[0], params.num_items))
    for start in range(0, P.shape[0], chunk):
        a = np.maximum(user_part[start:start + chunk, None, :] + item_part[None, :, :], 0.0)
        for w, c in zip(params.W[1:], params.b[1:]):
            a = np.maximum(a @ w + c, 0.0)
        out[start:start + chunk] = sigmoid(np.clip(a @ params.h, -LOGIT_CLAMP, LOGIT_CLAMP))
    return out
