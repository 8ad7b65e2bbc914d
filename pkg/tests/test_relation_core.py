import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowshot_re.relation_core import (
    NOTA_ID,
    InsufficientRelationsError,
    InvariantError,
    LabeledCorpus,
    ParseError,
    RelationInstance,
    RelationType,
    SpanBoundsError,
    SpanOrderError,
    EmptyTokensError,
    check_episode,
    nota_query_count,
    read_corpus,
    round_half_away,
    sample_episode,
    validate_instance,
    write_corpus,
)

TIM = RelationInstance(("Tim", "Cook", "is", "the", "CEO", "of", "Apple", "Inc", "."), (0, 1), (6, 7), "ceo_of")


def test_tim_cook_instance_is_valid():
    assert validate_instance(TIM) is TIM
    assert TIM.head_tokens == ("Tim", "Cook")
    assert TIM.tail_tokens == ("Apple", "Inc")


def test_single_token_overlapping_spans():
    with pytest.raises(SpanOrderError):
        validate_instance(RelationInstance(("a",), (0, 0), (0, 0)))


def test_tail_out_of_bounds():
    with pytest.raises(SpanBoundsError):
        validate_instance(RelationInstance(tuple("abcde"), (0, 0), (3, 5)))


def test_empty_tokens():
    with pytest.raises(EmptyTokensError):
        validate_instance(RelationInstance((), (0, 0), (1, 1)))


def test_empty_description_rejected():
    with pytest.raises(InvariantError):
        RelationType("r", ())


def test_round_half_away():
    assert [round_half_away(x) for x in (0.5, 1.5, 2.5, -0.5, 0.49)] == [1, 2, 3, -1, 0]
    assert nota_query_count(0.15, 10) == 2  # 1.5 rounds up, unlike banker's rounding
    assert nota_query_count(0.5, 10) == 5


def test_example_episode_shapes(corpus):
    ep = sample_episode(corpus, "train", 5, 1, 10, 0.0, 7)
    check_episode(ep, 10)
    assert ep.n_way == 5 and ep.k_shot == 1
    assert all(q.relation_id in ep.support for q in ep.queries)
    assert len(ep.choices) == 5

    ep = sample_episode(corpus, "train", 5, 5, 10, 0.5, 7)
    check_episode(ep, 10)
    golds = [q.relation_id for q in ep.queries]
    assert golds.count(NOTA_ID) == 5
    assert sum(g in ep.support for g in golds) == 5
    assert ep.choices[-1].is_nota and ep.choices[-1].description == ("others",)


def test_same_seed_same_episode(corpus):
    assert sample_episode(corpus, "test", 5, 1, 5, 0.15, 3) == sample_episode(corpus, "test", 5, 1, 5, 0.15, 3)
    assert sample_episode(corpus, "test", 5, 1, 5, 0.0, 3) != sample_episode(corpus, "test", 5, 1, 5, 0.0, 4)


def test_too_few_relations(corpus):
    with pytest.raises(InsufficientRelationsError):
        sample_episode(corpus, "test", 10, 1, 5, 0.15, 0)


def test_removing_unsampled_relation_keeps_episode(corpus):
    ep = sample_episode(corpus, "train", 5, 1, 5, 0.0, 11)
    victim = next(r for r in corpus.relations_in("train") if r not in ep.support)
    smaller = LabeledCorpus(
        [i for i in corpus.instances if i.relation_id != victim],
        {k: v for k, v in corpus.relations.items() if k != victim},
        {k: v for k, v in corpus.splits.items() if k != victim},
    )
    assert sample_episode(smaller, "train", 5, 1, 5, 0.0, 11) == ep


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 5),
    k=st.integers(0, 3),
    q=st.integers(0, 12),
    rate=st.sampled_from([0.0, 0.15, 0.5]),
    seed=st.integers(0, 2**31),
)
def test_episode_invariants_property(corpus, n, k, q, rate, seed):
    ep = sample_episode(corpus, "train", n, k, q, rate, seed)
    check_episode(ep, q)
    assert sum(x.relation_id == NOTA_ID for x in ep.queries) == nota_query_count(rate, q)


def test_empty_file_is_empty_corpus(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text("")
    c = read_corpus(p)
    assert c.instances == [] and c.relations == {}


def test_tim_cook_roundtrip(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps({"tokens": list(TIM.tokens), "head": [1, 2], "tail": [7, 8], "relation": "ceo_of"}) + "\n")
    c = read_corpus(p)
    assert c.instances == [TIM]
    assert c.relations["ceo_of"].description == ("ceo", "of")


def test_write_read_byte_stable(tmp_path, corpus):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    write_corpus(corpus, a)
    write_corpus(read_corpus(a), b)
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.relations.json").read_bytes() == (tmp_path / "b.relations.json").read_bytes()
    assert read_corpus(a) == corpus


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps({"tokens": ["a", "b"], "head": [1, 1], "tail": [2, 2], "relation": "r"}) + "\n{oops\n")
    with pytest.raises(ParseError) as err:
        read_corpus(p)
    assert err.value.line == 2


def test_bad_span_reports_line(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps({"tokens": ["a", "b"], "head": [2, 2], "tail": [1, 1], "relation": "r"}) + "\n")
    with pytest.raises(InvariantError) as err:
        read_corpus(p)
    assert err.value.line == 1
