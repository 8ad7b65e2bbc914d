"""Encoder + prompt codec + matching head bundled as one predictor."""

from __future__ import annotations

from dataclasses import asdict
from typing import List, Optional, Sequence

import torch

from . import matching
from .encoder import (
    EncoderConfig,
    encode_batch,
    encode_hash,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .matching import HeadConfig
from .prompt_codec import DEFAULT_MAX_LEN, SPECIAL_TOKENS, ModelInput, Vocabulary, encode_instance
from .relation_core import RelationInstance, RelationType


class ChoiceMatcher:
    """Scores instances against a list of relation choices.

    ``encoder`` is a TinyTransformer; its parameters are the model weights.
    """

    def __init__(self, vocab: Vocabulary, encoder, head: HeadConfig = HeadConfig(), max_len: int = DEFAULT_MAX_LEN):
        self.vocab = vocab
        self.encoder = encoder
        self.head = head.validate()
        self.max_len = max_len

    @classmethod
    def create(cls, vocab: Vocabulary, head: HeadConfig = HeadConfig(), max_len: int = DEFAULT_MAX_LEN, **encoder_kw):
        cfg = EncoderConfig(vocab_size=len(vocab), max_positions=max(max_len, encoder_kw.pop("max_positions", max_len)), **encoder_kw)
        return cls(vocab, init_params(cfg), head, max_len)

    def inputs(self, choices: Sequence[RelationType], instances: Sequence[RelationInstance]) -> List[ModelInput]:
        return [encode_instance(choices, inst, self.vocab, self.max_len) for inst in instances]

    def distances(self, inputs: Sequence[ModelInput], mode: str = "eval", dropout_seed: Optional[int] = None):
        enc = encode_batch(self.encoder, inputs, mode, dropout_seed)
        return [matching.input_distances(enc[b], inp, self.head) for b, inp in enumerate(inputs)]

    def mean_loss(self, inputs, golds: Sequence[int], mode: str = "eval", dropout_seed: Optional[int] = None):
        dists = self.distances(inputs, mode, dropout_seed)
        losses = [matching.loss_from_distances(d, g) for d, g in zip(dists, golds)]
        return torch.stack(losses).mean()

    def predict(self, inputs: Sequence[ModelInput]) -> List[int]:
        with torch.no_grad():
            return [matching.predict(matching.probabilities(d)) for d in self.distances(inputs)]

    def match_results(self, inputs, golds: Optional[Sequence[int]] = None) -> List[matching.MatchResult]:
        with torch.no_grad():
            dists = self.distances(inputs)
        golds = golds if golds is not None else [None] * len(dists)
        return [matching.match_result(d, g) for d, g in zip(dists, golds)]

    def save(self, path, extra: Optional[dict] = None) -> None:
        meta = {"vocab": self.vocab.tokens(), "head": asdict(self.head), "max_len": self.max_len}
        meta.update(extra or {})
        save_checkpoint(self.encoder, path, meta)

    @classmethod
    def load(cls, path) -> "ChoiceMatcher":
        encoder, meta = load_checkpoint(path)
        vocab = Vocabulary(meta["vocab"][len(SPECIAL_TOKENS) :])
        return cls(vocab, encoder, HeadConfig(**meta.get("head", {})), meta.get("max_len", DEFAULT_MAX_LEN))


class HashMatcher:
    """Matching head over the parameter-free hash encoder."""

    def __init__(self, vocab: Vocabulary, dim: int = 64, head: HeadConfig = HeadConfig(), max_len: int = DEFAULT_MAX_LEN):
        self.vocab = vocab
        self.dim = dim
        self.head = head.validate()
        self.max_len = max_len
        self.encoder = None

    inputs = ChoiceMatcher.inputs

    def distances(self, inputs, mode: str = "eval", dropout_seed=None):
        return [matching.input_distances(torch.from_numpy(encode_hash(inp, self.dim)), inp, self.head) for inp in inputs]

    def predict(self, inputs) -> List[int]:
        return [matching.predict(matching.probabilities(d)) for d in self.distances(inputs)]

    def match_results(self, inputs, golds=None):
        golds = golds if golds is not None else [None] * len(inputs)
        return [matching.match_result(d, g) for d, g in zip(self.distances(inputs), golds)]


def vocabulary_for(*token_sources) -> Vocabulary:
    """Vocabulary over every token in the given corpora/instances/choices."""
    streams = []
    for src in token_sources:
        for item in src:
            if isinstance(item, RelationInstance):
                streams.append(item.tokens)
            elif isinstance(item, RelationType):
                streams.append(item.description)
            elif hasattr(item, "paraphrase"):
                streams.append(item.paraphrase)
                streams.append(item.predicate)
            else:
                streams.append(item)
    return Vocabulary.build(streams)
