"""Independent re-derivations used as test oracles.

Nothing here imports the package's numerical code; each function recomputes
its quantity from the documented formula with numpy or plain Python.
"""

from __future__ import annotations

import hashlib
import math
from typing import Callable, List, Sequence

import numpy as np

SPECIALS = ["[CLS]", "[SEP]", "[C]", "[e1]", "[/e1]", "[e2]", "[/e2]", "[H]", "[R]", "[T]", "[PAD]", "[UNK]"]


def euclid(x, rels) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    rels = np.atleast_2d(np.asarray(rels, dtype=np.float64))
    out = []
    for r in rels:
        out.append(math.sqrt(sum((a - b) ** 2 for a, b in zip(x, r))))
    return np.array(out)


def softmax_neg(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    e = np.exp(-(d - d.min()))
    return e / e.sum()


def nll_onehot(p, gold: int) -> float:
    onehot = np.zeros(len(p))
    onehot[gold] = 1.0
    return float(-(onehot * np.log(p)).sum())


def argmin_first(d) -> int:
    best = 0
    for i, v in enumerate(d):
        if v < d[best]:
            best = i
    return best


def scan_markers(tokens: Sequence[str]):
    """(choice positions, e1, /e1, e2, /e2, seps) found by a linear scan."""
    return (
        [i for i, t in enumerate(tokens) if t == "[C]"],
        tokens.index("[e1]"),
        tokens.index("[/e1]"),
        tokens.index("[e2]"),
        tokens.index("[/e2]"),
        [i for i, t in enumerate(tokens) if t == "[SEP]"],
    )


def hash_unit_vector(token_id: int, d: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.blake2b(f"{token_id}:{d}".encode(), digest_size=8).digest(), "little")
    v = np.random.default_rng(seed).standard_normal(d)
    return v / math.sqrt(float(v @ v))


def central_difference(f: Callable[[], float], get: Callable[[], float], put: Callable[[float], None], h: float) -> float:
    x0 = get()
    put(x0 + h)
    up = f()
    put(x0 - h)
    down = f()
    put(x0)
    return (up - down) / (2 * h)


def hash_nearest_choice(choices, instance, token_id, d: int = 64) -> int:
    """Brute-force bag-of-words matcher over hash vectors.

    Choice i is the mean hash vector of its description; the instance is the
    mean over its tokens outside the entity spans. Returns the nearest choice.
    """
    h0, h1 = instance.head_span
    t0, t1 = instance.tail_span
    context = [t for i, t in enumerate(instance.tokens) if not (h0 <= i <= h1 or t0 <= i <= t1)]
    x = np.mean([hash_unit_vector(token_id(t), d) for t in context], axis=0)
    best, best_d = 0, float("inf")
    for i, c in enumerate(choices):
        r = np.mean([hash_unit_vector(token_id(t), d) for t in c.description], axis=0)
        dist = float(np.sqrt(((x - r) ** 2).sum()))
        if dist < best_d:
            best, best_d = i, dist
    return best


def mean_std_ci(values: List[float]):
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    std = var**0.5
    return mean, 1.96 * std / n**0.5, std
