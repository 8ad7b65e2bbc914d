import json

import numpy as np
import pytest
import torch

from lowshot_re import matching
from lowshot_re.matching import (
    DimensionMismatchError,
    EmptyError,
    HeadConfig,
    MatchResult,
    MatchingError,
    match_result,
)

from oracles import argmin_first, euclid, nll_onehot, softmax_neg


def t(x):
    return torch.tensor(x, dtype=torch.float64)


def test_relation_rows_in_order():
    enc = t(np.arange(30.0).reshape(10, 3))
    assert torch.equal(matching.relation_representations(enc, [1, 4, 7]), enc[[1, 4, 7]])
    assert matching.relation_representations(enc, [2]).shape == (1, 3)
    with pytest.raises(IndexError):
        matching.relation_representations(enc, [10])


def test_gather_and_mean_oracles():
    rng = np.random.default_rng(0)
    for _ in range(100):
        L, d = int(rng.integers(4, 30)), int(rng.integers(1, 20))
        enc = rng.normal(size=(L, d))
        pos = sorted(rng.choice(L, size=int(rng.integers(1, L)), replace=False).tolist())
        got = matching.relation_representations(t(enc), pos).numpy()
        assert np.array_equal(got, np.stack([enc[p] for p in pos]))
        a, b = (int(v) for v in rng.choice(L, 2, replace=False))
        x = matching.instance_representation(t(enc), a, b).numpy()
        assert np.allclose(x, [(enc[a][j] + enc[b][j]) / 2 for j in range(d)], atol=1e-12)


def test_instance_mean_examples():
    enc = t([[1.0, 1.0], [3.0, 3.0], [5.0, 5.0]])
    assert matching.instance_representation(enc, 0, 1).tolist() == [2.0, 2.0]
    assert matching.instance_representation(enc, 2, 2).tolist() == [5.0, 5.0]
    assert matching.instance_representation(enc, 0, 1, closing=(2, 2)).tolist() == [3.5, 3.5]


def test_match_examples():
    assert matching.match(t([0.0, 0.0]), t([[3.0, 4.0]])).tolist() == [5.0]
    r = t([[1.0, 2.0], [0.5, -1.0]])
    assert matching.match(r[1], r)[1].item() == 0.0
    with pytest.raises(DimensionMismatchError):
        matching.match(t([0.0]), t([[1.0, 2.0]]))


def test_probability_examples():
    assert np.allclose(matching.probabilities(t([1.0, 2.0])).numpy(), [0.7311, 0.2689], atol=1e-4)
    assert np.allclose(matching.probabilities(t([3.0] * 4)).numpy(), 0.25)
    a = matching.probabilities(t([7.0, 7.5, 9.0])).numpy()
    b = matching.probabilities(t([0.0, 0.5, 2.0])).numpy()
    assert np.allclose(a, b, atol=1e-15)
    with pytest.raises(EmptyError):
        matching.probabilities(t([]))
    with pytest.raises(MatchingError):
        matching.probabilities(t([1.0, float("nan")]))


def test_probabilities_survive_huge_distances():
    p = matching.probabilities(t([1e4, 1e4 + 1]))
    assert torch.isfinite(p).all() and abs(p.sum().item() - 1) < 1e-12


def test_predict_examples():
    assert matching.predict(t([0.2, 0.5, 0.3])) == 1
    assert matching.predict(t([0.25] * 4)) == 0


def test_loss_examples():
    assert matching.loss(t([1.0, 0.0]), 0).item() == 0.0
    assert abs(matching.loss(t([0.5, 0.5]), 1).item() - 0.6931) < 1e-4
    with pytest.raises(IndexError):
        matching.loss(t([0.5, 0.5]), 2)


def test_random_cases_against_oracles():
    rng = np.random.default_rng(5)
    for _ in range(300):
        n, d = int(rng.integers(1, 10)), int(rng.integers(1, 33))
        x, rels = rng.normal(size=d), rng.normal(size=(n, d))
        gold = int(rng.integers(n))
        dist = matching.match(t(x), t(rels))
        p = matching.probabilities(dist)
        assert np.allclose(dist.numpy(), euclid(x, rels), atol=1e-9)
        assert np.allclose(p.numpy(), softmax_neg(euclid(x, rels)), atol=1e-6)
        assert matching.predict(p) == argmin_first(dist.tolist())
        assert abs(matching.loss(p, gold).item() - nll_onehot(p.numpy(), gold)) < 1e-6


def test_input_distances_uses_markers():
    from lowshot_re.prompt_codec import ModelInput

    enc = t(np.eye(8))
    inp = ModelInput(tuple(range(8)), (1, 3), 5, 6, 7, 7, (4, 7))
    d = matching.input_distances(enc, inp).numpy()
    x = (np.eye(8)[5] + np.eye(8)[7]) / 2
    assert np.allclose(d, euclid(x, np.eye(8)[[1, 3]]))


def test_head_config_rejects_unknown():
    with pytest.raises(MatchingError):
        HeadConfig(metric="cosine").validate()
    with pytest.raises(MatchingError):
        HeadConfig(entity_pooling="cls").validate()


def test_match_result_json_roundtrip():
    r = match_result(t([1.0, 0.2, 3.0]), gold=1)
    assert r.predicted == 1 and r.gold == 1
    back = MatchResult.from_json(r.to_json())
    assert back == r
    assert json.loads(r.to_json())["predicted"] == 1
