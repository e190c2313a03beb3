"""Top-K ranking, exposure ratio and utility metrics."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import GlobalParams, score_matrix


class MetricWarning(UserWarning):
    pass


@dataclass
class ExposureResult:
    epoch: int
    k_list: tuple
    per_target: dict = field(default_factory=dict)

    def mean(self, k: int) -> float:
        return float(np.mean(self.per_target[k]))


def rank_from_scores(scores: np.ndarray, train_positives, k: int) -> np.ndarray:
    """Top ``k`` items by descending score, excluding train positives.

    Ties go to the lower item index (stable sort on the negated scores).
    """
    s = np.array(scores, dtype=np.float64)
    s[np.asarray(train_positives, dtype=np.int64)] = -np.inf
    eligible = s.size - np.unique(np.asarray(train_positives, dtype=np.int64)).size
    if k > eligible:
        warnings.warn(f"K={k} exceeds {eligible} eligible items; returning all of them",
                      MetricWarning, stacklevel=2)
        k = eligible
    return np.argsort(-s, kind="stable")[:k]


def top_k(p_u, params: GlobalParams, k: int, train_positives) -> np.ndarray:
    return rank_from_scores(score_matrix(p_u, params)[0], train_positives, k)


def top_k_lists(P: np.ndarray, params: GlobalParams, k: int, train_positives: Sequence) -> list[np.ndarray]:
    """Top-K list for every row of ``P`` (one benign user each)."""
    S = score_matrix(P, params)
    for u, pos in enumerate(train_positives):
        S[u, pos] = -np.inf
    order = np.argsort(-S, axis=1, kind="stable")[:, :k]
    out = []
    for u, pos in enumerate(train_positives):
        eligible = params.num_items - np.unique(pos).size
        out.append(order[u, :min(k, eligible)])
    return out


def er_at_k(target: int, topk: Sequence[np.ndarray], train_positives: Sequence, k=None) -> float:
    """Share of benign users lacking ``target`` in train whose top-K contains it.

    ``topk`` holds each benign user's list; ``k`` truncates the lists when set.
    """
    hits = eligible = 0
    for lst, pos in zip(topk, train_positives):
        if target in pos:
            continue
        eligible += 1
        if target in (lst if k is None else lst[:k]):
            hits += 1
    if eligible == 0:
        warnings.warn(f"item {target} is a train positive of every benign user", MetricWarning, stacklevel=2)
        return 0.0
    return hits / eligible


def exposure(topk: Sequence[np.ndarray], train_positives: Sequence, targets, k_list, epoch: int = 0) -> ExposureResult:
    """ER@K for each target and each K, from lists of length ``>= max(k_list)``."""
    k_list = tuple(sorted(k_list))
    pos_sets = [set(map(int, p)) for p in train_positives]
    lists = [list(map(int, lst)) for lst in topk]
    result = ExposureResult(epoch, k_list)
    for k in k_list:
        result.per_target[k] = np.array(
            [er_at_k(int(t), [lst[:k] for lst in lists], pos_sets) for t in targets]
        )
    return result


def utility_metrics(topk: Sequence[np.ndarray], test_positives: Sequence, k: int = 10) -> tuple[float, float]:
    """Mean hit ratio and NDCG at ``k`` over users with a non-empty test set.

    Per user, hit ratio is ``|top-K ∩ test| / min(K, |test|)`` and NDCG uses
    binary relevance against the ideal ordering of the test items.
    """
    hrs, ndcgs = [], []
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    for lst, test in zip(topk, test_positives):
        if len(test) == 0:
            continue
        rel = np.isin(np.asarray(lst[:k]), test).astype(float)
        ideal = min(k, len(test))
        hrs.append(rel.sum() / ideal)
        ndcgs.append(float(rel @ discounts[:rel.size]) / discounts[:ideal].sum())
    if not hrs:
        return 0.0, 0.0
    return float(np.mean(hrs)), float(np.mean(ndcgs))
