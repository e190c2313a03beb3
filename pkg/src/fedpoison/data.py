"""Interaction data: loading, implicit conversion, splitting and sampling."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import stream

FORMATS = ("ml-1m", "csv")


class DataFormatError(ValueError):
    pass


class DegenerateSampleWarning(UserWarning):
    pass


@dataclass
class InteractionData:
    """Per-user positive item lists over densely indexed users and items."""

    num_users: int
    num_items: int
    train: list[np.ndarray]
    test: list[np.ndarray]
    user_ids: list = field(default_factory=list)
    item_ids: list = field(default_factory=list)

    def __post_init__(self):
        self._counts = None

    @property
    def item_counts(self) -> np.ndarray:
        if self._counts is None:
            counts = np.zeros(self.num_items, dtype=np.int64)
            for items in self.train:
                counts[items] += 1
            self._counts = counts
        return self._counts

    @property
    def num_interactions(self) -> int:
        return int(sum(len(t) for t in self.train) + sum(len(t) for t in self.test))

    def mean_train_size(self) -> float:
        return float(np.mean([len(t) for t in self.train])) if self.train else 0.0

    def check(self) -> None:
        for u, (tr, te) in enumerate(zip(self.train, self.test)):
            if np.intersect1d(tr, te).size:
                raise ValueError(f"user {u}: train and test overlap")
            for arr in (tr, te):
                if arr.size and (arr.min() < 0 or arr.max() >= self.num_items):
                    raise ValueError(f"user {u}: item index out of range")


@dataclass
class TrainingSet:
    user: int
    items: np.ndarray
    labels: np.ndarray
    degenerate: bool = False

    def __len__(self):
        return len(self.items)


def _parse_line(line: str, fmt: str, lineno: int):
    if fmt == "ml-1m":
        parts = line.split("::")
        if len(parts) != 4:
            raise DataFormatError(f"line {lineno}: expected 4 '::'-separated fields, got {len(parts)}")
    else:
        parts = [s.strip() for s in line.split(",")]
        if len(parts) not in (3, 4):
            raise DataFormatError(f"line {lineno}: expected 3 or 4 comma-separated fields, got {len(parts)}")
    user, item, rating = parts[0].strip(), parts[1].strip(), parts[2].strip()
    try:
        float(rating)
        if fmt == "ml-1m":
            user, item = int(user), int(item)
    except ValueError:
        raise DataFormatError(f"line {lineno}: malformed record {line!r}") from None
    if user == "" or item == "":
        raise DataFormatError(f"line {lineno}: empty id")
    return user, item


def load_interactions(path, fmt: str = "ml-1m") -> InteractionData:
    """Read a rating file; every rated pair becomes one positive.

    Ids are re-indexed densely in order of first appearance and repeated
    (user, item) records collapse to a single positive. The result is
    unsplit: all positives sit in ``train``.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    users: dict = {}
    items: dict = {}
    profiles: list[dict] = []
    with open(path, encoding="latin-1") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if fmt == "csv" and lineno == 1 and not _looks_numeric_record(line):
                continue
            u, i = _parse_line(line, fmt, lineno)
            uid = users.setdefault(u, len(users))
            iid = items.setdefault(i, len(items))
            if uid == len(profiles):
                profiles.append({})
            profiles[uid].setdefault(iid, None)
    if not users:
        raise DataFormatError(f"{path}: no interactions found")
    train = [np.fromiter(p.keys(), dtype=np.int64, count=len(p)) for p in profiles]
    test = [np.zeros(0, dtype=np.int64) for _ in profiles]
    return InteractionData(len(users), len(items), train, test, list(users), list(items))


def _looks_numeric_record(line: str) -> bool:
    try:
        float(line.split(",")[2])
        return True
    except (IndexError, ValueError):
        return False


def split_per_user(data: InteractionData, seed: int = 0, test_fraction: int = 5) -> InteractionData:
    """Move ``floor(n / 5)`` of each user's positives to test, at random."""
    train, test = [], []
    for u in range(data.num_users):
        pos = np.concatenate([data.train[u], data.test[u]])
        k = len(pos) // test_fraction
        rng = stream(seed, "split", u)
        chosen = np.zeros(len(pos), dtype=bool)
        if k:
            chosen[rng.choice(len(pos), size=k, replace=False)] = True
        train.append(pos[~chosen])
        test.append(pos[chosen])
    return InteractionData(data.num_users, data.num_items, train, test, data.user_ids, data.item_ids)


def negatives_for(positives: np.ndarray, num_items: int, count: int, rng: np.random.Generator):
    """Uniform draw without replacement from items outside ``positives``.

    Returns ``(items, degenerate)``; degenerate means fewer than ``count``
    candidates existed and all of them were taken.
    """
    mask = np.ones(num_items, dtype=bool)
    mask[positives] = False
    candidates = np.flatnonzero(mask)
    if candidates.size < count:
        return candidates, True
    return rng.choice(candidates, size=count, replace=False), False


def build_training_set(user: int, positives: np.ndarray, num_items: int, r: int,
                       rng: np.random.Generator) -> TrainingSet:
    negs, degenerate = negatives_for(positives, num_items, r * len(positives), rng)
    items = np.concatenate([positives, negs]).astype(np.int64)
    labels = np.concatenate([np.ones(len(positives)), np.zeros(len(negs))])
    return TrainingSet(user, items, labels, degenerate)


def sample_negatives(user: int, data: InteractionData, r: int = 4, seed: int = 0,
                     epoch: int = 0) -> TrainingSet:
    """All train positives of ``user`` plus ``r`` fresh negatives per positive."""
    if r < 1:
        raise ValueError(f"negative ratio must be >= 1, got {r}")
    rng = stream(seed, "negatives", epoch, user)
    ts = build_training_set(user, data.train[user], data.num_items, r, rng)
    if ts.degenerate:
        warnings.warn(f"user {user}: only {len(ts) - len(data.train[user])} negatives available "
                      f"for {len(data.train[user])} positives at r={r}", DegenerateSampleWarning, stacklevel=2)
    return ts


def select_target_items(data: InteractionData, T: int = 1) -> np.ndarray:
    """The ``T`` items with fewest train interactions, ties to lower index."""
    if not 0 < T <= data.num_items:
        raise ValueError(f"T must be in [1, {data.num_items}], got {T}")
    order = np.argsort(data.item_counts, kind="stable")
    return order[:T].copy()


def make_synthetic(num_users: int = 200, num_items: int = 100, min_interactions: int = 20,
                   max_interactions: int = 40, exponent: float = 1.0, seed: int = 0) -> InteractionData:
    """Unsplit toy data with Zipf-like item popularity.

    Item ``j`` is drawn with weight ``(j + 1) ** -exponent`` (item 0 most
    popular). Every item is guaranteed at least one interaction.
    """
    if max_interactions > num_items:
        raise ValueError("max_interactions cannot exceed num_items")
    rng = np.random.default_rng(seed)
    weights = (np.arange(num_items) + 1.0) ** -exponent
    weights /= weights.sum()
    sizes = rng.integers(min_interactions, max_interactions + 1, size=num_users)
    profiles = [rng.choice(num_items, size=s, replace=False, p=weights) for s in sizes]
    seen = np.zeros(num_items, dtype=bool)
    for prof in profiles:
        seen[prof] = True
    for item in np.flatnonzero(~seen):
        u = int(rng.integers(num_users))
        profiles[u] = np.append(profiles[u], item)
    train = [p.astype(np.int64) for p in profiles]
    test = [np.zeros(0, dtype=np.int64) for _ in profiles]
    return InteractionData(num_users, num_items, train, test,
                           list(range(1, num_users + 1)), list(range(1, num_items + 1)))


def write_ml1m(data: InteractionData, path) -> Path:
    """Write all positives as ``user::item::1::0`` lines (1-based ids)."""
    path = Path(path)
    with open(path, "w") as fh:
        for u in range(data.num_users):
            for i in np.concatenate([data.train[u], data.test[u]]):
                fh.write(f"{u + 1}::{int(i) + 1}::1::0\n")
    return path
