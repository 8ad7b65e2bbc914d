"""Quick invariant suite behind ``lowshot-re selftest``.

Each check compares library output against a direct re-derivation (numpy
formulas, finite differences, recounts). The full suite lives in tests/.
"""

from __future__ import annotations

import math
import random
from typing import Callable, List

import numpy as np
import torch

from . import matching
from .encoder import EncoderConfig, encode, gradients, init_params
from .eval_harness import aggregate
from .fixtures import load_corpus
from .model import ChoiceMatcher, vocabulary_for
from .prompt_codec import Vocabulary, encode_instance
from .relation_core import RelationInstance, RelationType, check_episode, nota_query_count, sample_episode
from .training import AdaptConfig, adapt_episode, direct_predictions


class SelfTestFailure(AssertionError):
    pass


def _expect(ok: bool, message: str) -> None:
    if not ok:
        raise SelfTestFailure(message)


def _matching_head() -> None:
    rng = np.random.default_rng(0)
    for _ in range(200):
        n, d = int(rng.integers(1, 9)), int(rng.integers(1, 65))
        x, rels = rng.normal(size=d), rng.normal(size=(n, d))
        dist = np.sqrt(((x[None, :] - rels) ** 2).sum(axis=1))
        p = np.exp(-dist) / np.exp(-dist).sum()
        gold = int(rng.integers(0, n))
        got_d = matching.match(torch.from_numpy(x), torch.from_numpy(rels)).numpy()
        got_p = matching.probabilities(torch.from_numpy(got_d)).numpy()
        _expect(np.allclose(got_d, dist, atol=1e-9), "distance mismatch")
        _expect(np.allclose(got_p, p, atol=1e-6), "probability mismatch")
        _expect(matching.predict(torch.from_numpy(got_p)) == int(np.argmax(p)), "prediction mismatch")
        got_l = float(matching.loss_from_distances(torch.from_numpy(got_d), gold))
        _expect(abs(got_l + math.log(p[gold])) < 1e-6, "loss mismatch")


def _gradient_check() -> None:
    vocab = Vocabulary(["a", "b", "c"])
    model = init_params(EncoderConfig(len(vocab), hidden_dim=4, layers=1, heads=1, ffn_dim=4, dropout=0.0, dtype="float64"))
    choices = [RelationType("r0", ("a",)), RelationType("r1", ("b",))]
    inp = encode_instance(choices, RelationInstance(("a", "c"), (0, 0), (1, 1), "r0"), vocab)

    def loss_fn(enc):
        return matching.loss_from_distances(matching.input_distances(enc, inp), 0)

    grads = gradients(model, inp, loss_fn)
    rng = random.Random(0)
    params = dict(model.named_parameters())
    for _ in range(20):
        name = rng.choice(sorted(params))
        p = params[name]
        idx = tuple(rng.randrange(s) for s in p.shape)
        with torch.no_grad():
            old = p[idx].item()
            p[idx] = old + 1e-6
            up = float(loss_fn(encode(model, inp)))
            p[idx] = old - 1e-6
            down = float(loss_fn(encode(model, inp)))
            p[idx] = old
        fd = (up - down) / 2e-6
        g = grads[name][idx].item()
        _expect(abs(g - fd) <= 1e-3 * max(1.0, abs(fd)), f"{name}{idx}: {g} vs {fd}")


def _restore_law() -> None:
    corpus = load_corpus()
    vocab = vocabulary_for(corpus.instances, corpus.relations.values())
    model = ChoiceMatcher.create(vocab, hidden_dim=16, layers=1, heads=2, ffn_dim=16)
    for s in range(5):
        ep = sample_episode(corpus, "test", 3, 1, 2, 0.0, s)
        for n in (0, 2):
            res = adapt_episode(model, ep, AdaptConfig(epochs=n))
            _expect(res.digest_before == res.digest_after, "parameters changed")
            if n == 0:
                _expect(res.predictions == direct_predictions(model, ep), "n=0 differs from direct prediction")


def _episodes() -> None:
    corpus = load_corpus()
    for s in range(300):
        rate = (0.0, 0.15, 0.5)[s % 3]
        ep = sample_episode(corpus, "train", 5, 1, 5, rate, s)
        check_episode(ep, 5)
        _expect(sum(q.relation_id == "__nota__" for q in ep.queries) == nota_query_count(rate, 5), "NOTA count")


def _aggregate() -> None:
    mean, ci, std = aggregate([1, 0, 1, 0])
    _expect(abs(mean - 0.5) < 1e-4 and abs(ci - 0.5659) < 1e-4 and abs(std - 0.5774) < 1e-4, f"got {mean}, {ci}, {std}")


CHECKS = [
    ("matching head vs direct formulas", _matching_head),
    ("gradients vs finite differences", _gradient_check),
    ("adapt-and-restore leaves parameters unchanged", _restore_law),
    ("episode invariants and NOTA counts", _episodes),
    ("aggregate arithmetic", _aggregate),
]


def run_all(report: Callable[[str], None] = print) -> int:
    failures: List[str] = []
    for name, check in CHECKS:
        try:
            check()
        except Exception as exc:  # noqa: BLE001 - every failure is reported
            failures.append(name)
            report(f"FAIL {name}: {type(exc).__name__}: {exc}")
        else:
            report(f"PASS {name}")
    return len(failures)
