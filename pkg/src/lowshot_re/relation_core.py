"""Relation instances, relation types, labeled corpora and episode sampling.

Spans are 0-based inclusive in memory and 1-based inclusive on disk.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

NOTA_ID = "__nota__"
NOTA_DESCRIPTION = ("others",)
SPLITS = ("train", "val", "test")


class RelationDataError(ValueError):
    pass


class EmptyTokensError(RelationDataError):
    pass


class SpanOrderError(RelationDataError):
    pass


class SpanBoundsError(RelationDataError):
    pass


class InsufficientRelationsError(RelationDataError):
    pass


class InsufficientInstancesError(RelationDataError):
    pass


class ParseError(RelationDataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvariantError(RelationDataError):
    def __init__(self, message: str, line: Optional[int] = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


@dataclass(frozen=True)
class RelationInstance:
    tokens: Tuple[str, ...]
    head_span: Tuple[int, int]
    tail_span: Tuple[int, int]
    relation_id: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "head_span", tuple(self.head_span))
        object.__setattr__(self, "tail_span", tuple(self.tail_span))

    @property
    def head_tokens(self) -> Tuple[str, ...]:
        i, j = self.head_span
        return self.tokens[i : j + 1]

    @property
    def tail_tokens(self) -> Tuple[str, ...]:
        k, l = self.tail_span
        return self.tokens[k : l + 1]


@dataclass(frozen=True)
class RelationType:
    id: str
    description: Tuple[str, ...]
    is_nota: bool = False

    def __post_init__(self):
        object.__setattr__(self, "description", tuple(self.description))
        if not self.description:
            raise InvariantError(f"relation {self.id!r} has an empty description")


def nota_relation() -> RelationType:
    return RelationType(NOTA_ID, NOTA_DESCRIPTION, is_nota=True)


@dataclass(frozen=True)
class Episode:
    """One N-way K-shot task.

    ``support`` keeps insertion order, which is also the order of the first
    N entries of ``choices``.
    """

    support: Mapping[str, Tuple[RelationInstance, ...]]
    queries: Tuple[RelationInstance, ...]
    choices: Tuple[RelationType, ...]
    nota_rate: float = 0.0
    seed: int = 0

    @property
    def n_way(self) -> int:
        return len(self.support)

    @property
    def k_shot(self) -> int:
        sizes = {len(v) for v in self.support.values()}
        return sizes.pop() if len(sizes) == 1 else -1

    def choice_index(self, relation_id: str) -> int:
        for i, rel in enumerate(self.choices):
            if rel.id == relation_id:
                return i
        raise KeyError(relation_id)

    def support_instances(self) -> List[RelationInstance]:
        return [inst for insts in self.support.values() for inst in insts]


@dataclass
class LabeledCorpus:
    instances: List[RelationInstance] = field(default_factory=list)
    relations: Dict[str, RelationType] = field(default_factory=dict)
    splits: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self._by_relation: Optional[Dict[str, List[int]]] = None

    def relations_in(self, split: str) -> List[str]:
        return sorted(rid for rid, tag in self.splits.items() if tag == split)

    def by_relation(self) -> Dict[str, List[int]]:
        if self._by_relation is None:
            index: Dict[str, List[int]] = {}
            for i, inst in enumerate(self.instances):
                index.setdefault(inst.relation_id, []).append(i)
            self._by_relation = index
        return self._by_relation

    def check(self) -> "LabeledCorpus":
        for n, inst in enumerate(self.instances, start=1):
            validate_instance(inst)
            if inst.relation_id not in self.relations:
                raise InvariantError(
                    f"instance relation {inst.relation_id!r} is not in the catalog", n
                )
        for rid, tag in self.splits.items():
            if tag not in SPLITS:
                raise InvariantError(f"relation {rid!r} has unknown split {tag!r}")
        return self

    def __eq__(self, other):
        if not isinstance(other, LabeledCorpus):
            return NotImplemented
        return (
            self.instances == other.instances
            and self.relations == other.relations
            and self.splits == other.splits
        )


def validate_instance(inst: RelationInstance) -> RelationInstance:
    n = len(inst.tokens)
    if n == 0:
        raise EmptyTokensError("instance has no tokens")
    (i, j), (k, l) = inst.head_span, inst.tail_span
    if i < 0 or l >= n or i > j or k > l:
        raise SpanBoundsError(f"spans {inst.head_span}, {inst.tail_span} outside 0..{n - 1}")
    if j >= k:
        raise SpanOrderError(f"head span {inst.head_span} must end before tail span {inst.tail_span}")
    return inst


def round_half_away(x: float) -> int:
    return int(x + 0.5) if x >= 0 else -int(-x + 0.5)


def nota_query_count(nota_rate: float, n_queries: int) -> int:
    return round_half_away(nota_rate * n_queries)


def _rank_key(seed: int, *parts) -> bytes:
    text = ":".join(str(p) for p in (seed, *parts))
    return hashlib.blake2b(text.encode(), digest_size=16).digest()


def _ranked_members(seed: int, rid: str, members: Sequence[int]) -> List[int]:
    # Keyed by ordinal within the relation, so other relations cannot shift it.
    order = sorted(range(len(members)), key=lambda j: _rank_key(seed, "inst", rid, j))
    return [members[j] for j in order]


def sample_episode(
    corpus: LabeledCorpus,
    split: str,
    N: int,
    K: int,
    Q: int,
    nota_rate: float = 0.0,
    seed: int = 0,
) -> Episode:
    """Sample an episode from the relations tagged ``split``.

    Relations and instances are chosen by ranking seeded hashes, so removing
    a relation that was not chosen leaves the episode unchanged. Non-NOTA
    queries are spread round-robin over the N sampled relations; NOTA queries
    come from split relations outside the N.
    """
    if not 0.0 <= nota_rate < 1.0:
        raise ValueError(f"nota_rate must be in [0, 1), got {nota_rate}")
    if N < 1 or K < 0 or Q < 0:
        raise ValueError(f"bad episode shape N={N} K={K} Q={Q}")
    rng = random.Random(seed)
    pool = corpus.relations_in(split)
    n_nota = nota_query_count(nota_rate, Q)
    need = N + 1 if nota_rate > 0 else N
    if len(pool) < need:
        raise InsufficientRelationsError(
            f"split {split!r} has {len(pool)} relations, episode needs {need}"
        )
    index = corpus.by_relation()
    ranked = sorted(pool, key=lambda rid: _rank_key(seed, "rel", rid))
    picked, outside = ranked[:N], ranked[N:]

    per_rel = [0] * N
    for q in range(Q - n_nota):
        per_rel[q % N] += 1
    rng.shuffle(per_rel)

    support: Dict[str, Tuple[RelationInstance, ...]] = {}
    queries: List[RelationInstance] = []
    for rid, n_q in zip(picked, per_rel):
        members = index.get(rid, [])
        if len(members) < K + n_q:
            raise InsufficientInstancesError(
                f"relation {rid!r} has {len(members)} instances, episode needs {K + n_q}"
            )
        drawn = _ranked_members(seed, rid, members)[: K + n_q]
        support[rid] = tuple(corpus.instances[i] for i in drawn[:K])
        queries.extend(corpus.instances[i] for i in drawn[K:])

    if n_nota:
        # Spread NOTA queries round-robin over the outside relations in rank order.
        sources = [rid for rid in outside if index.get(rid)]
        if not sources:
            raise InsufficientInstancesError("no instances outside the episode for NOTA queries")
        want: Dict[str, int] = {}
        for q in range(n_nota):
            rid = sources[q % len(sources)]
            want[rid] = want.get(rid, 0) + 1
        for rid in sources:
            if rid not in want:
                continue
            members = index[rid]
            if len(members) < want[rid]:
                raise InsufficientInstancesError(
                    f"relation {rid!r} has {len(members)} instances for {want[rid]} NOTA queries"
                )
            for i in _ranked_members(seed, rid, members)[: want[rid]]:
                inst = corpus.instances[i]
                queries.append(
                    RelationInstance(inst.tokens, inst.head_span, inst.tail_span, NOTA_ID)
                )
    rng.shuffle(queries)

    choices = [corpus.relations[rid] for rid in picked]
    if nota_rate > 0:
        choices.append(nota_relation())
    return Episode(
        support=support,
        queries=tuple(queries),
        choices=tuple(choices),
        nota_rate=nota_rate,
        seed=seed,
    )


def check_episode(ep: Episode, Q: Optional[int] = None) -> None:
    """Raise InvariantError unless ``ep`` satisfies every episode invariant."""
    ids = list(ep.support)
    if len(set(ids)) != len(ids):
        raise InvariantError("duplicate support relations")
    sizes = {len(v) for v in ep.support.values()}
    if len(sizes) > 1:
        raise InvariantError(f"uneven support sizes {sorted(sizes)}")
    choice_ids = [c.id for c in ep.choices]
    nota_choices = [c for c in ep.choices if c.is_nota]
    if len(nota_choices) > 1:
        raise InvariantError("more than one NOTA choice")
    if choice_ids[: len(ids)] != ids:
        raise InvariantError("choices do not follow support order")
    allowed = set(ids) | {NOTA_ID}
    for q in ep.queries:
        if q.relation_id not in allowed:
            raise InvariantError(f"query label {q.relation_id!r} not in episode")
    n_nota = sum(q.relation_id == NOTA_ID for q in ep.queries)
    if n_nota != nota_query_count(ep.nota_rate, len(ep.queries)):
        raise InvariantError(f"{n_nota} NOTA queries for rate {ep.nota_rate}")
    if n_nota and not nota_choices:
        raise InvariantError("NOTA queries without a NOTA choice")
    if Q is not None and len(ep.queries) != Q:
        raise InvariantError(f"{len(ep.queries)} queries, expected {Q}")
    seen = {(s.tokens, s.head_span, s.tail_span) for s in ep.support_instances()}
    for q in ep.queries:
        if (q.tokens, q.head_span, q.tail_span) in seen:
            raise InvariantError("instance appears in both support and queries")


# -- file formats ----------------------------------------------------------


def instance_to_json(inst: RelationInstance) -> str:
    obj = {
        "tokens": list(inst.tokens),
        "head": [inst.head_span[0] + 1, inst.head_span[1] + 1],
        "tail": [inst.tail_span[0] + 1, inst.tail_span[1] + 1],
        "relation": inst.relation_id,
    }
    return json.dumps(obj, ensure_ascii=False)


def instance_from_obj(obj, line: int) -> RelationInstance:
    try:
        tokens = obj["tokens"]
        head = obj["head"]
        tail = obj["tail"]
        relation = obj.get("relation")
    except (KeyError, TypeError, AttributeError) as exc:
        raise ParseError(f"missing field {exc}", line) from None
    if not (isinstance(tokens, list) and all(isinstance(t, str) for t in tokens)):
        raise ParseError("tokens must be an array of strings", line)
    for name, span in (("head", head), ("tail", tail)):
        if not (isinstance(span, list) and len(span) == 2 and all(type(v) is int for v in span)):
            raise ParseError(f"{name} must be a two-int array", line)
    inst = RelationInstance(
        tuple(tokens), (head[0] - 1, head[1] - 1), (tail[0] - 1, tail[1] - 1), relation
    )
    try:
        validate_instance(inst)
    except RelationDataError as exc:
        raise InvariantError(str(exc), line) from exc
    return inst


def read_instances(path) -> List[RelationInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, n) from None
            out.append(instance_from_obj(obj, n))
    return out


def write_instances(instances: Sequence[RelationInstance], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(instance_to_json(inst) + "\n")


def catalog_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".relations.json")


def read_catalog(path) -> Tuple[Dict[str, RelationType], Dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno) from None
    relations, splits = {}, {}
    for rid, entry in raw.items():
        desc = entry.get("description", "")
        relations[rid] = RelationType(rid, tuple(desc.split()))
        if "split" in entry:
            splits[rid] = entry["split"]
    return relations, splits


def write_catalog(relations: Mapping[str, RelationType], splits: Mapping[str, str], path) -> None:
    raw = {}
    for rid in sorted(relations):
        entry = {"description": " ".join(relations[rid].description)}
        if rid in splits:
            entry["split"] = splits[rid]
        raw[rid] = entry
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(raw, fh, indent=1, ensure_ascii=False)
        fh.write("\n")


def read_corpus(path, catalog=None) -> LabeledCorpus:
    """Read a JSONL corpus plus its relation catalog.

    The catalog defaults to ``<stem>.relations.json`` next to the corpus; a
    missing catalog yields relations with their id as description.
    """
    instances = read_instances(path)
    catalog = Path(catalog) if catalog else catalog_path_for(path)
    if catalog.exists():
        relations, splits = read_catalog(catalog)
    else:
        relations, splits = {}, {}
        for inst in instances:
            if inst.relation_id is not None and inst.relation_id not in relations:
                relations[inst.relation_id] = RelationType(
                    inst.relation_id, tuple(inst.relation_id.replace("_", " ").split())
                )
    corpus = LabeledCorpus(instances, relations, splits)
    for n, inst in enumerate(instances, start=1):
        if inst.relation_id not in relations:
            raise InvariantError(f"relation {inst.relation_id!r} not in catalog", n)
    return corpus


def write_corpus(corpus: LabeledCorpus, path, catalog=None) -> None:
    write_instances(corpus.instances, path)
    if corpus.relations:
        write_catalog(corpus.relations, corpus.splits, catalog or catalog_path_for(path))
