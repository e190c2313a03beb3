"""Reference implementations used only by tests.

Nothing here calls into the package's forward/backward code: the NCF score
is recomputed with explicit per-layer loops, gradients come from central
finite differences and rankings from plain Python sorting.
"""
import math

import numpy as np

FD_STEP = 1e-5


def ref_score(p, q, Ws, bs, h):
    x = list(p) + list(q)
    for W, b in zip(Ws, bs):
        x = [max(0.0, sum(x[i] * W[i][j] for i in range(len(x))) + b[j]) for j in range(len(b))]
    logit = sum(a * w for a, w in zip(x, h))
    return 1.0 / (1.0 + math.exp(-logit))


def ref_preacts(p, q, Ws, bs):
    x = list(p) + list(q)
    out = []
    for W, b in zip(Ws, bs):
        z = [sum(x[i] * W[i][j] for i in range(len(x))) + b[j] for j in range(len(b))]
        out.extend(z)
        x = [max(0.0, v) for v in z]
    return out


def unpack(theta, shapes):
    """Split a flat vector into arrays of the given shapes."""
    out, pos = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        out.append(theta[pos:pos + size].reshape(shape))
        pos += size
    return out


def bce_pairs_loss(p, Q, Ws, bs, h, items, labels):
    total = 0.0
    for i, y in zip(items, labels):
        s = ref_score(p, Q[i], Ws, bs, h)
        total -= y * math.log(s) + (1 - y) * math.log(1 - s)
    return total


def promotion_loss(P_hat, Q, Ws, bs, h, targets):
    """(1/n) sum_i sum_j -log score(P_hat[i][j], q_i)."""
    n = len(P_hat[0])
    total = 0.0
    for t, samples in zip(targets, P_hat):
        for p in samples:
            total -= math.log(ref_score(p, Q[t], Ws, bs, h))
    return total / n


def central_diff(f, x, step=FD_STEP):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for k in range(x.size):
        old = x.flat[k]
        x.flat[k] = old + step
        up = f(x)
        x.flat[k] = old - step
        down = f(x)
        x.flat[k] = old
        g.flat[k] = (up - down) / (2 * step)
    return g


def max_rel_error(analytic, numeric, floor=1e-5):
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def brute_top_k(scores, positives, k):
    pos = set(int(i) for i in positives)
    ranked = sorted((i for i in range(len(scores)) if i not in pos), key=lambda i: (-scores[i], i))
    return ranked[:k]


def brute_er(target, score_rows, positives_list, k):
    eligible = hits = 0
    for scores, positives in zip(score_rows, positives_list):
        if target in set(int(i) for i in positives):
            continue
        eligible += 1
        hits += target in brute_top_k(scores, positives, k)
    return hits / eligible if eligible else 0.0


def np_scores(P, Qrows, Ws, bs, h):
    """Row-wise scores with plain matrix products; used where loops are too slow."""
    x = np.concatenate([P, Qrows], axis=1)
    for W, b in zip(Ws, bs):
        x = np.maximum(x @ W + b, 0.0)
    return 1.0 / (1.0 + np.exp(-(x @ h)))


def np_min_preact(P, Qrows, Ws, bs):
    x = np.concatenate([P, Qrows], axis=1)
    smallest = np.inf
    for W, b in zip(Ws, bs):
        z = x @ W + b
        smallest = min(smallest, float(np.abs(z).min()))
        x = np.maximum(z, 0.0)
    return smallest
