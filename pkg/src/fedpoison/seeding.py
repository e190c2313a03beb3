"""Master-seed splitting.

One master seed feeds several independent random streams. A stream is keyed
by ``(master_seed, purpose, *extra)`` where ``purpose`` is one of the fixed
integer tags below and ``extra`` are non-negative integers such as an epoch
or a client index. The key is handed to :class:`numpy.random.SeedSequence`
as its entropy, so changing the draws of one purpose never shifts another.
"""
import numpy as np

PURPOSES = {
    "init": 1,
    "split": 2,
    "negatives": 3,
    "attack": 4,
    "selection": 5,
    "fake_users": 6,
    "user_init": 7,
}


def stream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    key = [int(seed), PURPOSES[purpose], *(int(e) for e in extra)]
    if min(key) < 0:
        raise ValueError(f"seed keys must be non-negative, got {key}")
    return np.random.default_rng(np.random.SeedSequence(key))
