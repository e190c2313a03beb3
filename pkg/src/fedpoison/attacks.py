"""Malicious-client behaviour.

Two gradient-poisoning attacks that need no knowledge of benign users:

* ``a_ra`` approximates benign embeddings with small Gaussian samples and
  uploads the gradient of ``-(1/n) sum log score(p_hat, q_target)``;
* ``a_hum`` first pushes each sample toward users that dislike the target
  (a few descent steps on ``-log(1 - score)``), then does the same.

Baselines: ``ra`` (fake users rating the targets plus random fillers) and
``eb`` (malicious users optimise target promotion with their own embedding).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .federation import MALICIOUS, ClientState
from .model import GlobalParams, GradientUpdate, backward, forward
from .seeding import stream

KINDS = ("none", "ra", "eb", "a_ra", "a_hum")


@dataclass
class AttackParams:
    kind: str = "none"
    targets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    num_samples: int = 10
    sample_std: float = 0.01
    mining_lr: float = 0.001
    mining_steps: int = 30
    poison_scale: float = 1.0
    malicious_fraction: float = 0.005
    seed: int = 0

    def __post_init__(self):
        self.targets = np.atleast_1d(np.asarray(self.targets, dtype=np.int64))
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if self.num_samples < 1:
            raise ValueError(f"num_samples must be >= 1, got {self.num_samples}")
        if self.sample_std < 0 or self.mining_lr < 0 or self.mining_steps < 0:
            raise ValueError("sample_std, mining_lr and mining_steps must be non-negative")
        if self.poison_scale <= 0:
            raise ValueError(f"poison_scale must be positive, got {self.poison_scale}")
        if not 0 <= self.malicious_fraction < 1:
            raise ValueError(f"malicious_fraction must be in [0, 1), got {self.malicious_fraction}")
        if self.kind != "none" and self.targets.size == 0:
            raise ValueError(f"attack {self.kind!r} needs at least one target item")


def num_malicious(fraction: float, num_users: int) -> int:
    """``ceil(fraction * N)``, tolerant of float noise such as ``0.01 * 200``."""
    return int(math.ceil(fraction * num_users - 1e-9))


def _check_targets(targets, params: GlobalParams):
    if targets.size and (targets.min() < 0 or targets.max() >= params.num_items):
        raise IndexError(f"target index out of range [0, {params.num_items})")


def promotion_gradient(params: GlobalParams, targets: np.ndarray, p_hat: np.ndarray):
    """Loss ``(1/n) sum_i sum_j -log score(p_hat[i, j], q_i)`` and its shared-parameter gradient.

    ``p_hat`` has shape ``(len(targets), n, d)``; the samples are constants.
    """
    _check_targets(targets, params)
    T, n, d = p_hat.shape
    items = np.repeat(targets, n)
    scores, tape = forward(p_hat.reshape(T * n, d), items, params)
    loss = float(-np.sum(np.log(scores)) / n)
    grads = backward(tape, -1.0 / (n * scores), params)
    return loss, GradientUpdate.from_gradients(grads, items)


def sample_approx_embeddings(params: GlobalParams, ap: AttackParams, rng) -> np.ndarray:
    return rng.normal(0.0, ap.sample_std, size=(ap.targets.size, ap.num_samples, params.embed_dim))


def a_ra_update(params: GlobalParams, ap: AttackParams, rng) -> GradientUpdate:
    """Poison from Gaussian approximations of benign embeddings."""
    rng = np.random.default_rng(rng)
    p_hat = sample_approx_embeddings(params, ap, rng)
    _, update = promotion_gradient(params, ap.targets, p_hat)
    return update.scaled(ap.poison_scale)


def hard_user_loss(params: GlobalParams, target: int, p) -> np.ndarray:
    p = np.atleast_2d(p)
    scores, _ = forward(p, np.full(len(p), target), params)
    return -np.log1p(-scores)


def mine_hard_user(params: GlobalParams, target: int, p_init, lr: float, steps: int) -> np.ndarray:
    """``steps`` plain descent steps on ``-log(1 - score(p, q_target))`` over ``p``.

    Works on one vector ``(d,)`` or a stack ``(n, d)``; rows are independent.
    """
    p = np.array(p_init, dtype=np.float64)
    if steps == 0:
        return p
    single = p.ndim == 1
    p = np.atleast_2d(p)
    items = np.full(len(p), target)
    for _ in range(steps):
        scores, tape = forward(p, items, params)
        grads = backward(tape, 1.0 / (1.0 - scores), params)
        p = p - lr * grads.grad_p
    return p[0] if single else p


def a_hum_update(params: GlobalParams, ap: AttackParams, rng) -> GradientUpdate:
    """Poison aimed at mined hard users of each target."""
    rng = np.random.default_rng(rng)
    p_hat = sample_approx_embeddings(params, ap, rng)
    _check_targets(ap.targets, params)
    if ap.mining_steps:
        for t, target in enumerate(ap.targets):
            p_hat[t] = mine_hard_user(params, int(target), p_hat[t], ap.mining_lr, ap.mining_steps)
    _, update = promotion_gradient(params, ap.targets, p_hat)
    return update.scaled(ap.poison_scale)


def eb_update(params: GlobalParams, client: ClientState, ap: AttackParams, lr: float) -> GradientUpdate:
    """Explicit boosting with the client's own embedding, updated locally."""
    if ap.targets.size == 0:
        return GradientUpdate.zeros(params)
    _check_targets(ap.targets, params)
    scores, tape = forward(client.p, ap.targets, params)
    grads = backward(tape, -1.0 / scores, params)
    client.p = client.p - lr * grads.grad_p.sum(axis=0)
    return GradientUpdate.from_gradients(grads, ap.targets).scaled(ap.poison_scale)


def eb_loss(params: GlobalParams, p, targets) -> float:
    scores, _ = forward(p, np.asarray(targets, dtype=np.int64), params)
    return float(-np.sum(np.log(scores)))


def ra_make_fake_clients(data, ap: AttackParams, count: int, seed: int = 0,
                         embed_dim: int = 8) -> list[ClientState]:
    """Fake users rating every target plus ``round(mean profile) - |targets|`` random fillers."""
    fillers = max(0, int(round(data.mean_train_size())) - ap.targets.size)
    pool = np.setdiff1d(np.arange(data.num_items), ap.targets)
    fillers = min(fillers, pool.size)
    out = []
    for j in range(count):
        index = data.num_users + j
        rng = stream(seed, "fake_users", j)
        chosen = rng.choice(pool, size=fillers, replace=False)
        positives = np.concatenate([ap.targets, np.sort(chosen)]).astype(np.int64)
        p = stream(seed, "user_init", index).normal(0.0, 0.01, size=embed_dim)
        out.append(ClientState(index, p, MALICIOUS, positives))
    return out


class PoisoningAttack:
    """Dispatches malicious-client uploads for one configured attack."""

    def __init__(self, ap: AttackParams):
        self.params = ap

    def malicious_update(self, client: ClientState, params: GlobalParams, t: int, lr: float) -> GradientUpdate:
        ap = self.params
        if ap.kind == "a_ra":
            return a_ra_update(params, ap, stream(ap.seed, "attack", t, client.index))
        if ap.kind == "a_hum":
            return a_hum_update(params, ap, stream(ap.seed, "attack", t, client.index))
        if ap.kind == "eb":
            return eb_update(params, client, ap, lr)
        raise ValueError(f"attack {ap.kind!r} does not craft gradients")


def make_malicious_clients(data, ap: AttackParams, count: int, seed: int, embed_dim: int) -> list[ClientState]:
    """Clients indexed after the benign users, shaped for ``ap.kind``."""
    if ap.kind == "none" or count == 0:
        return []
    if ap.kind == "ra":
        return ra_make_fake_clients(data, ap, count, seed, embed_dim)
    out = []
    for j in range(count):
        index = data.num_users + j
        p = None
        if ap.kind == "eb":
            p = stream(seed, "user_init", index).normal(0.0, 0.01, size=embed_dim)
        out.append(ClientState(index, p, MALICIOUS, None))
    return out
