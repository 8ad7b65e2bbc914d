"""Pseudo-labeled pre-training data from raw sentences.

Pipeline: extract (subject, predicate, object) triplets with a shallow
rule-based chunker, wrap them as ``[H] s [R] p [T] o``, fill a paraphrase
template, and group the results into batches whose predicates are distinct.
The extractor and paraphraser are plain callables so heavier backends can be
swapped in.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from .prompt_codec import HEAD, REL, TAIL
from .relation_core import RelationInstance, RelationType

DETERMINERS = frozenset(
    "the a an its his her their this these those our my your some many several every each".split()
)
PARTICLES = frozenset(
    "as of in on at to for with by from into onto about after before under over "
    "through during between against up out off down near".split()
)
PRONOUNS = frozenset("he she it they we i you".split())
AUXILIARIES = frozenset(
    "is are was were be been being has have had does do did will would can could "
    "may might shall should must".split()
)
ADVERBS = frozenset("also later then still often never once first recently originally formerly".split())
BOUNDARIES = frozenset("and or but that which who whom whose while because if when where".split())

VERB_BASES = (
    "trace found own join lead play direct produce publish release record sign acquire "
    "create design develop launch manage marry name locate border host serve support "
    "train teach study visit enter open close start finish join replace follow succeed "
    "defeat attend represent receive award compose perform compete appoint elect retire "
    "return move settle establish invent discover describe consider list rank include "
    "contain connect cross reach surround flow rise drain employ hire fund sponsor "
    "command capture destroy restore rename merge split share influence inspire adapt "
    "translate illustrate narrate broadcast distribute manufacture operate own pioneer "
    "coach mentor adopt inherit belong"
).split()

IRREGULAR_FORMS = frozenset(
    "known born made written built led won held taken given sold bought became become began "
    "begun grew grown left met ran saw seen took gave wrote told found kept brought thought "
    "taught chose chosen drew drawn flew shown sang sung spoke spoken stood struck sent spent "
    "lost paid fought beaten bred fed hung lent shot sunk swept understood withdrew".split()
)


def _inflect(base: str) -> List[str]:
    if base.endswith("e"):
        return [base + "s", base + "d"]
    if base.endswith("y") and base[-2:-1] not in "aeiou":
        return [base[:-1] + "ies", base[:-1] + "ied"]
    if base.endswith(("s", "sh", "ch", "x", "z")):
        return [base + "es", base + "ed"]
    return [base + "s", base + "ed"]


VERB_FORMS = frozenset(f for b in VERB_BASES for f in _inflect(b)) | IRREGULAR_FORMS
BASE_FORMS = frozenset(VERB_BASES)
MAX_PREDICATE_TOKENS = 6


class PseudoDataError(ValueError):
    pass


class MalformedWrapError(PseudoDataError):
    pass


class AmbiguousSpanError(PseudoDataError):
    pass


class InsufficientDistinctPredicatesError(PseudoDataError):
    pass


@dataclass(frozen=True)
class Triplet:
    subject: Tuple[str, ...]
    predicate: Tuple[str, ...]
    object: Tuple[str, ...]
    sentence: Tuple[str, ...] = ()
    subject_span: Tuple[int, int] = (0, 0)
    predicate_span: Tuple[int, int] = (0, 0)
    object_span: Tuple[int, int] = (0, 0)
    sentence_id: Optional[int] = None

    def check(self) -> "Triplet":
        if not (self.subject and self.predicate and self.object):
            raise PseudoDataError("triplet parts must be nonempty")
        if self.sentence:
            for span, part in (
                (self.subject_span, self.subject),
                (self.predicate_span, self.predicate),
                (self.object_span, self.object),
            ):
                i, j = span
                if not 0 <= i <= j < len(self.sentence) or self.sentence[i : j + 1] != part:
                    raise PseudoDataError(f"span {span} does not locate {part} in the sentence")
        return self


@dataclass(frozen=True)
class PseudoInstance:
    paraphrase: Tuple[str, ...]
    predicate: Tuple[str, ...]
    subj_span: Tuple[int, int]
    obj_span: Tuple[int, int]
    origin: Optional[Triplet] = None

    @property
    def label(self) -> str:
        return normalize_predicate(self.predicate)

    def to_relation_instance(self) -> RelationInstance:
        head, tail = sorted([self.subj_span, self.obj_span])
        return RelationInstance(self.paraphrase, head, tail, self.label)


@dataclass
class PseudoBatch:
    batch_id: int
    instances: List[PseudoInstance]
    choices: List[str]

    def gold(self, i: int) -> int:
        return self.choices.index(self.instances[i].label)

    def relation_types(self) -> List[RelationType]:
        return [RelationType(c, tuple(c.split())) for c in self.choices]


@dataclass(frozen=True)
class PseudoCorpusConfig:
    batch_size: int = 8
    seed: int = 0
    max_predicate_tokens: int = MAX_PREDICATE_TOKENS


def normalize_predicate(tokens: Iterable[str]) -> str:
    return " ".join(" ".join(tokens).lower().split())


# -- extraction ----------------------------------------------------------------


def _word_class(tok: str, prev: Optional[str], in_vp: bool) -> str:
    low = tok.lower()
    if not any(ch.isalnum() for ch in tok):
        return "punct"
    if low in DETERMINERS:
        return "det"
    if low in BOUNDARIES:
        return "stop"
    if low in PRONOUNS:
        return "pron"
    if low in PARTICLES:
        return "part"
    after_det = prev is not None and prev.lower() in DETERMINERS
    if low in AUXILIARIES:
        return "verb"
    if low in VERB_FORMS and not after_det:
        return "verb"
    if in_vp and (low in BASE_FORMS or low in ADVERBS):
        return "verb"
    if low in ADVERBS:
        return "adv"
    return "noun"


def chunk(tokens: Sequence[str]) -> List[Tuple[str, int, int]]:
    """Shallow chunking into ``(kind, start, end)`` with kinds NP, VP, O.

    NP is an optional determiner plus a run of noun-like tokens, or a pronoun.
    VP starts at a verb-like token, absorbs further verbs/adverbs and then any
    trailing particles.
    """
    chunks: List[Tuple[str, int, int]] = []
    i, n = 0, len(tokens)
    while i < n:
        prev = tokens[i - 1] if i else None
        kind = _word_class(tokens[i], prev, False)
        if kind == "pron":
            chunks.append(("NP", i, i))
            i += 1
        elif kind in ("det", "noun"):
            j = i + 1 if kind == "det" else i
            k = j
            while k < n and _word_class(tokens[k], tokens[k - 1], False) == "noun":
                k += 1
            if k == j:
                chunks.append(("O", i, i))
                i += 1
            else:
                chunks.append(("NP", i, k - 1))
                i = k
        elif kind == "verb":
            k = i + 1
            while k < n and _word_class(tokens[k], tokens[k - 1], True) == "verb":
                k += 1
            while k < n and _word_class(tokens[k], tokens[k - 1], True) == "part":
                k += 1
            chunks.append(("VP", i, k - 1))
            i = k
        else:
            chunks.append(("O", i, i))
            i += 1
    return chunks


def _triplet(tokens, s, p, o, sentence_id) -> Triplet:
    return Triplet(
        tuple(tokens[s[1] : s[2] + 1]),
        tuple(tokens[p[1] : p[2] + 1]),
        tuple(tokens[o[1] : o[2] + 1]),
        tuple(tokens),
        (s[1], s[2]),
        (p[1], p[2]),
        (o[1], o[2]),
        sentence_id,
    ).check()


def extract_triplets(
    tokens: Sequence[str],
    sentence_id: Optional[int] = None,
    max_predicate_tokens: int = MAX_PREDICATE_TOKENS,
) -> List[Triplet]:
    """Rule-based triplets: adjacent NP-VP-NP chunks plus "X known as Y"."""
    tokens = list(tokens)
    if not tokens:
        raise PseudoDataError("empty sentence")
    chunks = chunk(tokens)
    found: Dict[Tuple, Triplet] = {}
    for a, b, c in zip(chunks, chunks[1:], chunks[2:]):
        if (a[0], b[0], c[0]) == ("NP", "VP", "NP"):
            t = _triplet(tokens, a, b, c, sentence_id)
            found.setdefault((t.subject_span, t.predicate_span, t.object_span), t)
    # Appositive: NP "known as" NP, even when the chunker merged extra verbs.
    lowered = [t.lower() for t in tokens]
    for pos in range(len(tokens) - 1):
        if lowered[pos : pos + 2] != ["known", "as"]:
            continue
        left = [c for c in chunks if c[0] == "NP" and c[2] == pos - 1]
        right = [c for c in chunks if c[0] == "NP" and c[1] == pos + 2]
        if left and right:
            t = _triplet(tokens, left[0], ("VP", pos, pos + 1), right[0], sentence_id)
            found.setdefault((t.subject_span, t.predicate_span, t.object_span), t)
    out = sorted(found.values(), key=lambda t: t.predicate_span)
    return [t for t in out if len(t.predicate) <= max_predicate_tokens]


# -- wrapping and paraphrasing ------------------------------------------------------


def wrap_triplet(t: Triplet) -> List[str]:
    return [HEAD, *t.subject, REL, *t.predicate, TAIL, *t.object]


def unwrap_triplet(tokens: Sequence[str]) -> Tuple[Tuple[str, ...], Tuple[str, ...], Tuple[str, ...]]:
    tokens = list(tokens)
    if [t for t in tokens if t in (HEAD, REL, TAIL)] != [HEAD, REL, TAIL] or tokens[:1] != [HEAD]:
        raise MalformedWrapError("expected exactly [H] ... [R] ... [T] ...")
    r, t = tokens.index(REL), tokens.index(TAIL)
    subj, pred, obj = tuple(tokens[1:r]), tuple(tokens[r + 1 : t]), tuple(tokens[t + 1 :])
    if not (subj and pred and obj):
        raise MalformedWrapError("empty triplet part")
    return subj, pred, obj


# Each template is a token list with S/P/O slots.
TEMPLATES: Tuple[Tuple[str, ...], ...] = (
    ("as", "for", "<O>", ",", "<S>", "<P>", "."),
    ("there", "is", "<S>", "that", "<P>", "<O>", "."),
)


def _fill(template, subj, pred, obj):
    out: List[str] = []
    spans = {}
    for slot in template:
        part = {"<S>": subj, "<P>": pred, "<O>": obj}.get(slot)
        if part is None:
            out.append(slot)
        else:
            spans[slot] = (len(out), len(out) + len(part) - 1)
            out.extend(part)
    return out, spans


def count_occurrences(haystack: Sequence[str], needle: Sequence[str]) -> int:
    m = len(needle)
    return sum(1 for i in range(len(haystack) - m + 1) if tuple(haystack[i : i + m]) == tuple(needle))


def generate_paraphrase(
    wrapped: Sequence[str],
    template_index: int = 0,
    source: Optional[Sequence[str]] = None,
    origin: Optional[Triplet] = None,
) -> PseudoInstance:
    """Fill a reordering template with the lowercased triplet parts.

    When the result would copy ``source`` token for token, the next template
    is used instead.
    """
    subj, pred, obj = unwrap_triplet(wrapped)
    subj, pred, obj = ([t.lower() for t in part] for part in (subj, pred, obj))
    for attempt in range(len(TEMPLATES)):
        template = TEMPLATES[(template_index + attempt) % len(TEMPLATES)]
        tokens, spans = _fill(template, subj, pred, obj)
        if source is None or tokens != [t.lower() for t in source]:
            break
    else:
        raise PseudoDataError("every template reproduces the source sentence")
    for part in (subj, obj):
        if count_occurrences(tokens, part) != 1:
            raise AmbiguousSpanError(f"{' '.join(part)!r} is not unique in the paraphrase")
    return PseudoInstance(tuple(tokens), tuple(pred), spans["<S>"], spans["<O>"], origin)


# -- corpus assembly -----------------------------------------------------------------


def pseudo_instances(
    sentences: Iterable[Sequence[str]],
    extractor: Callable[..., List[Triplet]] = extract_triplets,
    paraphraser: Callable[..., PseudoInstance] = generate_paraphrase,
    max_predicate_tokens: int = MAX_PREDICATE_TOKENS,
) -> Iterator[PseudoInstance]:
    ordinal = 0
    for sid, sent in enumerate(sentences):
        if not sent:
            continue
        for t in extractor(sent, sid, max_predicate_tokens):
            try:
                yield paraphraser(wrap_triplet(t), ordinal, source=sent, origin=t)
            except AmbiguousSpanError:
                pass
            ordinal += 1


def batch_pseudo_instances(
    instances: Sequence[PseudoInstance], batch_size: int, seed: int = 0
) -> List[PseudoBatch]:
    """Shuffle, then fill batches greedily so no batch repeats a predicate.

    Instances that collide with their current batch wait in a queue and are
    tried first for later batches; an incomplete final batch is dropped.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    distinct = {inst.label for inst in instances}
    if len(distinct) < batch_size:
        raise InsufficientDistinctPredicatesError(
            f"{len(distinct)} distinct predicates, batch size {batch_size}"
        )
    order = list(instances)
    random.Random(seed).shuffle(order)
    batches: List[PseudoBatch] = []
    waiting: List[PseudoInstance] = []
    current: List[PseudoInstance] = []
    labels: set = set()

    def emit():
        batches.append(PseudoBatch(len(batches), list(current), [x.label for x in current]))
        current.clear()
        labels.clear()

    for inst in order:
        still = []
        for w in waiting:
            if w.label not in labels and len(current) < batch_size:
                current.append(w)
                labels.add(w.label)
            else:
                still.append(w)
        waiting = still
        if len(current) == batch_size:
            emit()
        if inst.label in labels:
            waiting.append(inst)
        else:
            current.append(inst)
            labels.add(inst.label)
        if len(current) == batch_size:
            emit()
    while waiting:
        progressed = False
        still = []
        for w in waiting:
            if w.label not in labels and len(current) < batch_size:
                current.append(w)
                labels.add(w.label)
                progressed = True
            else:
                still.append(w)
        waiting = still
        if len(current) == batch_size:
            emit()
        elif not progressed:
            break
    return batches


def build_pretraining_corpus(
    sentences: Iterable[Sequence[str]], config: PseudoCorpusConfig = PseudoCorpusConfig()
) -> List[PseudoBatch]:
    sentences = list(sentences)
    if not sentences:
        raise PseudoDataError("no input sentences")
    instances = list(pseudo_instances(sentences, max_predicate_tokens=config.max_predicate_tokens))
    return batch_pseudo_instances(instances, config.batch_size, config.seed)


def read_raw_sentences(path) -> List[List[str]]:
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh if line.strip()]


def write_pseudo_corpus(batches: Sequence[PseudoBatch], path) -> None:
    """JSONL, one instance per line; spans are 1-based inclusive."""
    with open(path, "w", encoding="utf-8") as fh:
        for b in batches:
            for inst in b.instances:
                row = {
                    "paraphrase": list(inst.paraphrase),
                    "predicate": list(inst.predicate),
                    "subj_span": [inst.subj_span[0] + 1, inst.subj_span[1] + 1],
                    "obj_span": [inst.obj_span[0] + 1, inst.obj_span[1] + 1],
                    "batch_id": b.batch_id,
                    "choices": b.choices,
                }
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_pseudo_corpus(path) -> List[PseudoBatch]:
    grouped: Dict[int, PseudoBatch] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                inst = PseudoInstance(
                    tuple(row["paraphrase"]),
                    tuple(row["predicate"]),
                    (row["subj_span"][0] - 1, row["subj_span"][1] - 1),
                    (row["obj_span"][0] - 1, row["obj_span"][1] - 1),
                )
                bid = int(row["batch_id"])
                choices = list(row["choices"])
            except (KeyError, TypeError, ValueError, IndexError) as exc:
                raise PseudoDataError(f"line {n}: {exc}") from None
            batch = grouped.setdefault(bid, PseudoBatch(bid, [], choices))
            if batch.choices != choices:
                raise PseudoDataError(f"line {n}: batch {bid} has inconsistent choices")
            batch.instances.append(inst)
    return [grouped[k] for k in sorted(grouped)]
