"""Deterministic synthetic fixtures.

``make_relation_corpus`` builds a template-generated relation corpus whose
relation descriptions are invented two-word phrases; each instance mentions
one or both description words between (or after) its entity pair.
``make_raw_sentences`` builds English subject-verb-object text for the
triplet-paraphrase pipeline. The two vocabularies share no content words.
"""

from __future__ import annotations

import random
from typing import List, Set

from .relation_core import LabeledCorpus, RelationInstance, RelationType
from .triplet_paraphrase import IRREGULAR_FORMS, VERB_BASES, _inflect

CONSONANTS = "bdfgklmnprstvz"
VOWELS = "aeiou"
FILLERS = ("the", "was", "of", "in", "then", "also", "with", "and", "later", "its")


def pseudo_word(rng: random.Random, syllables: int = 3) -> str:
    return "".join(rng.choice(CONSONANTS) + rng.choice(VOWELS) for _ in range(syllables)) + rng.choice(
        CONSONANTS
    )


def _fresh_words(rng: random.Random, count: int, taken: Set[str], syllables: int = 3) -> List[str]:
    out = []
    while len(out) < count:
        w = pseudo_word(rng, syllables)
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def make_relation_corpus(
    n_relations: int = 50,
    n_train: int = 40,
    per_relation: int = 100,
    seed: int = 2022,
    n_entities: int = 400,
) -> LabeledCorpus:
    rng = random.Random(seed)
    taken: Set[str] = set()
    desc_words = _fresh_words(rng, 2 * n_relations, taken)
    entities = [w.capitalize() for w in _fresh_words(rng, n_entities, taken, syllables=2)]
    relations = {}
    splits = {}
    instances: List[RelationInstance] = []
    for r in range(n_relations):
        rid = f"R{r:02d}"
        d1, d2 = desc_words[2 * r], desc_words[2 * r + 1]
        relations[rid] = RelationType(rid, (d1, d2))
        splits[rid] = "train" if r < n_train else "test"
        seen = set()
        while len(seen) < per_relation:
            head = [rng.choice(entities) for _ in range(rng.choice((1, 1, 2)))]
            tail = [rng.choice(entities) for _ in range(rng.choice((1, 1, 2)))]
            if head == tail:
                continue
            u = rng.random()
            if u < 0.4:
                trigger = [d1, d2]
            elif u < 0.6:
                trigger = [d1, rng.choice(FILLERS), d2]
            elif u < 0.8:
                trigger = [d1]
            else:
                trigger = [d2]
            pre = [rng.choice(FILLERS)] if rng.random() < 0.5 else []
            post = [rng.choice(FILLERS)] if rng.random() < 0.3 else []
            if rng.random() < 0.8:
                tokens = head + pre + trigger + post + tail + ["."]
                tail_start = len(head) + len(pre) + len(trigger) + len(post)
            else:
                tokens = head + ["and"] + tail + pre + trigger + ["."]
                tail_start = len(head) + 1
            key = tuple(tokens)
            if key in seen:
                continue
            seen.add(key)
            instances.append(
                RelationInstance(
                    key,
                    (0, len(head) - 1),
                    (tail_start, tail_start + len(tail) - 1),
                    rid,
                )
            )
    return LabeledCorpus(instances, relations, splits).check()


SUBJECT_NOUNS = (
    "company band river club school team museum city author singer council "
    "university army church novel film album station party league studio "
    "ship engine village hospital bridge library festival magazine network airline"
).split()
OBJECT_NOUNS = (
    "history rights music record award title song village region border office "
    "ceremony contract factory champion series prize garden tower castle harbor "
    "island valley railway poem treaty statue portrait theatre"
).split()
PROPER = (
    "London Paris Berlin Madrid Oslo Vienna Dublin Cairo Lima Tokyo Boston Denver "
    "Harold Maria Peter Alice Victor Laura Henry Clara Oscar Ingrid Walter Sofia"
).split()
DETS = ("the", "a", "its", "their", "this")


def english_content_words() -> Set[str]:
    words = set(SUBJECT_NOUNS) | set(OBJECT_NOUNS) | {p.lower() for p in PROPER}
    words |= set(VERB_BASES) | set(IRREGULAR_FORMS)
    for base in VERB_BASES:
        words.update(_inflect(base))
    return words


def make_raw_sentences(n: int = 4000, seed: int = 7, n_names: int = 1500) -> List[str]:
    """English subject-predicate-object sentences the rule extractor parses.

    Besides common nouns, subjects and objects draw on ``n_names`` invented
    four-syllable proper names, so most names are rare in the output (the
    relation corpus only uses two- and three-syllable words).
    """
    rng = random.Random(seed)
    names = [w.capitalize() for w in _fresh_words(rng, n_names, set(), syllables=4)]
    forms = []
    for base in sorted(set(VERB_BASES)):
        forms.extend(_inflect(base))
    forms.extend(sorted(IRREGULAR_FORMS - {"known"}))
    particles = ("", "", "", "in", "by", "to", "with", "for")

    def phrase(nouns, p_common):
        u = rng.random()
        if u < p_common:
            return [rng.choice(DETS), rng.choice(nouns)]
        if u < p_common + 0.15:
            return [rng.choice(PROPER)]
        return [rng.choice(names)]

    out = []
    for _ in range(n):
        subj = phrase(SUBJECT_NOUNS, 0.4)
        verb = [rng.choice(forms)]
        part = rng.choice(particles)
        if part:
            verb.append(part)
        obj = phrase(OBJECT_NOUNS, 0.35)
        out.append(" ".join(subj + verb + obj + ["."]))
    return out
