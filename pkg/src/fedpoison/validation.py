"""Input checks shared by the estimator and the CLI."""
from __future__ import annotations

import numpy as np

from .data import InteractionData


def check_interactions(X, num_items: int | None = None) -> InteractionData:
    """Coerce ``X`` to :class:`InteractionData`.

    ``X`` is either already an ``InteractionData`` or an ``(n, 2)`` integer
    array of ``(user, item)`` positives with dense non-negative ids.
    """
    if isinstance(X, InteractionData):
        X.check()
        return X
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of (user, item) pairs, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("no interactions given")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise ValueError("user and item ids must be integers")
        arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise ValueError("user and item ids must be non-negative")
    n_users = int(arr[:, 0].max()) + 1
    n_items = int(arr[:, 1].max()) + 1 if num_items is None else int(num_items)
    if arr[:, 1].max() >= n_items:
        raise ValueError(f"item id {arr[:, 1].max()} out of range for {n_items} items")
    train = []
    order = np.argsort(arr[:, 0], kind="stable")
    users, starts = np.unique(arr[order, 0], return_index=True)
    groups = dict(zip(users.tolist(), np.split(arr[order, 1], starts[1:])))
    for u in range(n_users):
        items = groups.get(u, np.zeros(0, dtype=np.int64))
        _, first = np.unique(items, return_index=True)
        train.append(items[np.sort(first)].astype(np.int64))
    test = [np.zeros(0, dtype=np.int64) for _ in range(n_users)]
    return InteractionData(n_users, n_items, train, test)


def check_pairs(X, num_users: int, num_items: int) -> np.ndarray:
    arr = np.asarray(X, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of (user, item) pairs, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr[:, 0].max() >= num_users or arr[:, 1].max() >= num_items):
        raise ValueError("user or item id out of range")
    return arr
