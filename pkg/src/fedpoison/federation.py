"""Federated training loop: clients, server, rounds.

Benign clients keep their embedding and interactions locally; the only
thing that crosses to the server is a :class:`~fedpoison.model.GradientUpdate`.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import build_training_set, TrainingSet
from .model import (
    GlobalParams,
    GradientUpdate,
    aggregate,
    apply_update,
    bce_grad,
    bce_loss,
    backward,
    forward,
)
from .seeding import stream

log = logging.getLogger(__name__)

BENIGN = "benign"
MALICIOUS = "malicious"


class EmptyTrainingSetWarning(UserWarning):
    pass


@dataclass
class ClientState:
    """One simulated device.

    ``positives`` is set for benign users and for fake users that imitate
    them (random-attack baseline); poisoning clients leave it ``None``.
    """

    index: int
    p: Optional[np.ndarray]
    role: str = BENIGN
    positives: Optional[np.ndarray] = None

    @property
    def trains_like_benign(self) -> bool:
        return self.positives is not None


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    neg_ratio: int = 4
    seed: int = 0
    policy: object = "all"
    loss_reduction: str = "mean"


@dataclass
class RoundReport:
    round: int
    num_benign: int
    num_malicious: int
    grad_norm: float
    loss: float
    wall_time: float
    participants: list = field(default_factory=list)


class ServerState:
    """Holds the shared parameters; accepts nothing but gradient uploads."""

    def __init__(self, params: GlobalParams):
        params.validate()
        self.params = params
        self.round = 0

    def broadcast(self) -> GlobalParams:
        """Read-only copy of the current parameters."""
        snapshot = self.params.copy()
        for a in snapshot.arrays():
            a.flags.writeable = False
        return snapshot

    def aggregate(self, uploads: Sequence[tuple[int, GradientUpdate]], lr: float) -> GradientUpdate:
        """Sum uploads in ascending client index and take one SGD step."""
        for _, up in uploads:
            if not isinstance(up, GradientUpdate):
                raise TypeError(f"server accepts GradientUpdate only, got {type(up).__name__}")
        ordered = [up for _, up in sorted(uploads, key=lambda pair: pair[0])]
        total = aggregate(ordered, self.params)
        self.params = apply_update(self.params, total, lr)
        self.round += 1
        return total


def init_clients(positives: Sequence[np.ndarray], embed_dim: int, seed: int) -> list[ClientState]:
    clients = []
    for u, pos in enumerate(positives):
        p = stream(seed, "user_init", u).normal(0.0, 0.01, size=embed_dim)
        clients.append(ClientState(u, p, BENIGN, np.asarray(pos, dtype=np.int64)))
    return clients


def select_participants(t: int, num_clients: int, policy="all", seed: int = 0) -> np.ndarray:
    """Indices taking part in round ``t``.

    ``policy`` is ``"all"`` or a fraction ``0 < f <= 1``; with a fraction,
    ``round(f * num_clients)`` clients (at least one) are drawn uniformly.
    """
    if policy == "all":
        return np.arange(num_clients)
    f = float(policy)
    if not 0 < f <= 1:
        raise ValueError(f"participation fraction must be in (0, 1], got {f}")
    count = max(1, int(round(f * num_clients)))
    rng = stream(seed, "selection", t)
    return np.sort(rng.choice(num_clients, size=count, replace=False))


def benign_client_step(client: ClientState, training_set: TrainingSet, params: GlobalParams,
                       lr: float, reduction: str = "sum") -> tuple[GradientUpdate, float]:
    """Local BCE step: update ``client.p`` in place, return the shared-parameter gradient and loss.

    ``reduction="mean"`` divides the loss (and so both gradients) by the
    number of pairs in the training set.
    """
    if len(training_set) == 0:
        warnings.warn(f"client {client.index}: empty training set", EmptyTrainingSetWarning, stacklevel=2)
        return GradientUpdate.zeros(params), 0.0
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown loss reduction {reduction!r}")
    weight = 1.0 / len(training_set) if reduction == "mean" else 1.0
    scores, tape = forward(client.p, training_set.items, params)
    loss = weight * bce_loss(scores, training_set.labels)
    grads = backward(tape, weight * bce_grad(scores, training_set.labels), params)
    client.p = client.p - lr * grads.grad_p.sum(axis=0)
    return GradientUpdate.from_gradients(grads, training_set.items), loss


def run_round(server: ServerState, clients: Sequence[ClientState], attack, config: TrainConfig,
              epoch: Optional[int] = None) -> RoundReport:
    start = time.perf_counter()
    t = server.round if epoch is None else epoch
    chosen = select_participants(t, len(clients), config.policy, config.seed)
    num_items = server.params.num_items
    uploads = []
    loss = 0.0
    n_benign = n_mal = degenerate = 0
    snapshot = server.broadcast()
    for idx in chosen:
        client = clients[idx]
        if client.trains_like_benign:
            rng = stream(config.seed, "negatives", t, client.index)
            ts = build_training_set(client.index, client.positives, num_items, config.neg_ratio, rng)
            update, client_loss = benign_client_step(client, ts, snapshot, config.learning_rate,
                                                     config.loss_reduction)
            degenerate += ts.degenerate
            if client.role == BENIGN:
                loss += client_loss
        else:
            if attack is None:
                raise ValueError(f"client {client.index} has no data and no attack is configured")
            update = attack.malicious_update(client, snapshot, t, config.learning_rate)
        if client.role == BENIGN:
            n_benign += 1
        else:
            n_mal += 1
        uploads.append((client.index, update))
    if degenerate:
        log.info("round %d: %d clients had fewer un-interacted items than r x positives", t, degenerate)
    total = server.aggregate(uploads, config.learning_rate)
    return RoundReport(t, n_benign, n_mal, total.norm(), loss, time.perf_counter() - start,
                       [int(i) for i in chosen])


def train(server: ServerState, clients: Sequence[ClientState], attack, epochs: int,
          config: TrainConfig, eval_hook: Optional[Callable] = None) -> list[RoundReport]:
    """One full-participation round per epoch; ``eval_hook(params, clients, report)`` after each."""
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    reports = []
    for epoch in range(epochs):
        report = run_round(server, clients, attack, config, epoch=epoch)
        log.debug("epoch %d: loss=%.4f |g|=%.4g (%d benign, %d malicious)", epoch, report.loss,
                  report.grad_norm, report.num_benign, report.num_malicious)
        reports.append(report)
        if eval_hook is not None:
            eval_hook(server.params, clients, report)
    return reports
