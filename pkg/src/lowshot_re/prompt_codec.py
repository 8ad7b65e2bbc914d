"""Multi-choice prompt construction and encoder input assembly.

An assembled input looks like::

    [CLS] [C] employee of [C] ceo of [C] others [SEP] [e1] Tim Cook [/e1] is ... [SEP]
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from .relation_core import RelationInstance, RelationType, validate_instance

CLS, SEP, CHOICE = "[CLS]", "[SEP]", "[C]"
E1, E1_END, E2, E2_END = "[e1]", "[/e1]", "[e2]", "[/e2]"
HEAD, REL, TAIL = "[H]", "[R]", "[T]"
PAD, UNK = "[PAD]", "[UNK]"
SPECIAL_TOKENS = (CLS, SEP, CHOICE, E1, E1_END, E2, E2_END, HEAD, REL, TAIL, PAD, UNK)
ENTITY_MARKERS = (E1, E1_END, E2, E2_END)
DEFAULT_MAX_LEN = 160


class CodecError(ValueError):
    pass


class EmptyChoicesError(CodecError):
    pass


class PromptTooLongError(CodecError):
    pass


class MarkerLossError(CodecError):
    pass


def tokenize(text: str) -> List[str]:
    return text.lower().split()


class Vocabulary:
    """Frozen token -> id map. Specials take ids 0..11 in a fixed order.

    Lookup is case-insensitive for ordinary tokens.
    """

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: List[str] = list(SPECIAL_TOKENS)
        self._stoi: Dict[str, int] = {t: i for i, t in enumerate(self._itos)}
        for tok in tokens:
            tok = tok if tok in self._stoi else tok.lower()
            if tok not in self._stoi:
                self._stoi[tok] = len(self._itos)
                self._itos.append(tok)

    @classmethod
    def build(cls, token_streams: Iterable[Iterable[str]]) -> "Vocabulary":
        seen = set()
        ordered = []
        for stream in token_streams:
            for tok in stream:
                tok = tok.lower()
                if tok not in seen:
                    seen.add(tok)
                    ordered.append(tok)
        return cls(sorted(ordered))

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._itos == other._itos

    def id(self, token: str) -> int:
        got = self._stoi.get(token)
        if got is None:
            got = self._stoi.get(token.lower(), self._stoi[UNK])
        return got

    def token(self, idx: int) -> str:
        return self._itos[idx]

    def ids(self, tokens: Iterable[str]) -> List[int]:
        return [self.id(t) for t in tokens]

    def tokens(self) -> List[str]:
        return list(self._itos)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self._itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise CodecError(f"{path}: special tokens missing or out of order")
        return cls(lines[len(SPECIAL_TOKENS) :])


def special_id(token: str) -> int:
    return SPECIAL_TOKENS.index(token)


@dataclass(frozen=True)
class ModelInput:
    ids: Tuple[int, ...]
    choice_marker_positions: Tuple[int, ...]
    e1_open: int
    e1_close: int
    e2_open: int
    e2_close: int
    sep_positions: Tuple[int, int]

    @property
    def length(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)


def build_choice_prompt(choices: Sequence[RelationType]) -> Tuple[List[str], List[int]]:
    """Return the ``[C] d1 [C] d2 ...`` token list and the index of every [C]."""
    if not choices:
        raise EmptyChoicesError("a prompt needs at least one choice")
    tokens: List[str] = []
    markers: List[int] = []
    for rel in choices:
        desc = rel.description if isinstance(rel, RelationType) else tuple(rel)
        if not desc:
            raise EmptyChoicesError("choice with empty description")
        markers.append(len(tokens))
        tokens.append(CHOICE)
        tokens.extend(desc)
    return tokens, markers


def wrap_instance(inst: RelationInstance) -> List[str]:
    validate_instance(inst)
    (i, j), (k, l) = inst.head_span, inst.tail_span
    out: List[str] = []
    for pos, tok in enumerate(inst.tokens):
        if pos == i:
            out.append(E1)
        if pos == k:
            out.append(E2)
        out.append(tok)
        if pos == j:
            out.append(E1_END)
        if pos == l:
            out.append(E2_END)
    return out


def strip_markers(tokens: Sequence[str]) -> List[str]:
    return [t for t in tokens if t not in ENTITY_MARKERS]


def _truncate(instance: Sequence[str], budget: int) -> List[str]:
    # Drop ordinary tokens from the right; markers are never dropped.
    keep = list(instance)
    excess = len(keep) - budget
    pos = len(keep) - 1
    while excess > 0 and pos >= 0:
        if keep[pos] not in ENTITY_MARKERS:
            del keep[pos]
            excess -= 1
        pos -= 1
    if excess > 0:
        raise MarkerLossError("truncation would drop an entity marker")
    # A span emptied by truncation leaves an open marker followed directly by
    # its close marker; refuse that too.
    for a, b in ((E1, E1_END), (E2, E2_END)):
        if a not in keep or b not in keep:
            raise MarkerLossError(f"instance lacks {a}/{b}")
        if keep.index(b) == keep.index(a) + 1:
            raise MarkerLossError(f"truncation emptied the {a} span")
    return keep


def assemble_input(
    prompt: Sequence[str],
    instance: Sequence[str],
    vocab: Vocabulary,
    max_len: int = DEFAULT_MAX_LEN,
) -> ModelInput:
    if len(prompt) + 3 > max_len:
        raise PromptTooLongError(f"prompt of {len(prompt)} tokens does not fit max_len={max_len}")
    missing = [m for m in ENTITY_MARKERS if m not in instance]
    if missing:
        raise MarkerLossError(f"instance lacks {missing}")
    budget = max_len - len(prompt) - 3
    if len(instance) > budget:
        instance = _truncate(instance, budget)
    tokens = [CLS, *prompt, SEP, *instance, SEP]
    ids = tuple(vocab.ids(tokens))
    first_sep = len(prompt) + 1
    offset = first_sep + 1
    choice_pos = tuple(1 + p for p, t in enumerate(prompt) if t == CHOICE)
    e1o, e1c, e2o, e2c = (offset + list(instance).index(m) for m in ENTITY_MARKERS)
    if not choice_pos:
        raise EmptyChoicesError("prompt has no [C] marker")
    if not (first_sep < e1o < e1c < e2o < e2c):
        raise CodecError("entity markers out of order")
    return ModelInput(ids, choice_pos, e1o, e1c, e2o, e2c, (first_sep, len(ids) - 1))


def scan_positions(ids: Sequence[int]) -> ModelInput:
    """Locate every structural marker in ``ids`` and check the layout."""
    ids = tuple(ids)
    c, sep = special_id(CHOICE), special_id(SEP)
    e1, e1e, e2, e2e = (special_id(t) for t in ENTITY_MARKERS)
    seps = [p for p, t in enumerate(ids) if t == sep]
    if not ids or ids[0] != special_id(CLS) or len(seps) != 2 or seps[1] != len(ids) - 1:
        raise CodecError("input must be [CLS] prompt [SEP] instance [SEP]")
    choice_pos = tuple(p for p, t in enumerate(ids) if t == c)
    if not choice_pos or choice_pos[-1] > seps[0]:
        raise CodecError("choice markers must all precede the first [SEP]")
    found = {}
    for marker in (e1, e1e, e2, e2e):
        hits = [p for p, t in enumerate(ids) if t == marker]
        if len(hits) != 1:
            raise CodecError(f"expected one {SPECIAL_TOKENS[marker]} marker, found {len(hits)}")
        found[marker] = hits[0]
    order = [found[e1], found[e1e], found[e2], found[e2e]]
    if not (seps[0] < order[0] < order[1] < order[2] < order[3] < seps[1]):
        raise CodecError("entity markers out of order")
    return ModelInput(ids, choice_pos, *order, sep_positions=(seps[0], seps[1]))


def encode_instance(
    choices: Sequence[RelationType],
    inst: RelationInstance,
    vocab: Vocabulary,
    max_len: int = DEFAULT_MAX_LEN,
) -> ModelInput:
    prompt, _ = build_choice_prompt(choices)
    return assemble_input(prompt, wrap_instance(inst), vocab, max_len)


def decode(ids: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.token(i) for i in ids)
