"""Choice matching: relation/instance representations, distances, softmax, loss.

All functions accept torch tensors (autograd flows through) or array-likes,
which are converted to float64 tensors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional, Sequence

import torch

from .prompt_codec import ModelInput


class MatchingError(ValueError):
    pass


class DimensionMismatchError(MatchingError):
    pass


class EmptyError(MatchingError):
    pass


@dataclass(frozen=True)
class HeadConfig:
    # "opening" averages [e1]/[e2]; "all" averages the four entity markers.
    entity_pooling: str = "opening"
    metric: str = "euclidean"

    def validate(self) -> "HeadConfig":
        if self.entity_pooling not in ("opening", "all"):
            raise MatchingError(f"unknown entity pooling {self.entity_pooling!r}")
        if self.metric != "euclidean":
            raise MatchingError(f"metric {self.metric!r} is not implemented")
        return self


def _t(x) -> torch.Tensor:
    return x if torch.is_tensor(x) else torch.as_tensor(x, dtype=torch.float64)


def relation_representations(enc, positions: Sequence[int]) -> torch.Tensor:
    enc = _t(enc)
    L = enc.shape[0]
    for p in positions:
        if not 0 <= p < L:
            raise IndexError(f"choice position {p} outside 0..{L - 1}")
    return enc[list(positions)]


def instance_representation(enc, e1_open: int, e2_open: int, closing=None) -> torch.Tensor:
    """Mean of the [e1] and [e2] rows; ``closing`` adds the [/e1], [/e2] rows."""
    enc = _t(enc)
    rows = [e1_open, e2_open] + (list(closing) if closing else [])
    for p in rows:
        if not 0 <= p < enc.shape[0]:
            raise IndexError(f"entity position {p} outside 0..{enc.shape[0] - 1}")
    if len(rows) == 2:
        return (enc[e1_open] + enc[e2_open]) / 2
    return enc[rows].mean(dim=0)


def match(x, rels) -> torch.Tensor:
    """Euclidean distance from the instance vector to each relation vector."""
    x, rels = _t(x), _t(rels)
    if rels.dim() == 1:
        rels = rels[None, :]
    if x.shape[-1] != rels.shape[-1]:
        raise DimensionMismatchError(f"instance dim {x.shape[-1]} != relation dim {rels.shape[-1]}")
    return torch.linalg.vector_norm(x[None, :] - rels, dim=-1)


def _check_finite(v: torch.Tensor, what: str) -> None:
    if not torch.isfinite(v).all():
        raise MatchingError(f"non-finite {what}")


def probabilities(distances) -> torch.Tensor:
    d = _t(distances)
    if d.numel() == 0:
        raise EmptyError("no distances")
    _check_finite(d, "distances")
    logits = -d
    e = torch.exp(logits - logits.max())
    return e / e.sum()


def log_probabilities(distances) -> torch.Tensor:
    d = _t(distances)
    _check_finite(d, "distances")
    return torch.log_softmax(-d, dim=-1)


def predict(probs) -> int:
    """Index of the largest probability; ties go to the lowest index."""
    p = _t(probs)
    if p.numel() == 0:
        raise EmptyError("empty probability vector")
    best = 0
    values = p.detach().tolist()
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def loss(probs, gold: int) -> torch.Tensor:
    p = _t(probs)
    if not 0 <= gold < p.shape[-1]:
        raise IndexError(f"gold index {gold} outside 0..{p.shape[-1] - 1}")
    return -torch.log(p[gold])


def loss_from_distances(distances, gold: int) -> torch.Tensor:
    """Same value as ``loss(probabilities(d), gold)``, computed in log space."""
    d = _t(distances)
    if not 0 <= gold < d.shape[-1]:
        raise IndexError(f"gold index {gold} outside 0..{d.shape[-1] - 1}")
    return -log_probabilities(d)[gold]


def input_distances(enc, inp: ModelInput, head: HeadConfig = HeadConfig()) -> torch.Tensor:
    rels = relation_representations(enc, inp.choice_marker_positions)
    closing = (inp.e1_close, inp.e2_close) if head.entity_pooling == "all" else None
    x = instance_representation(enc, inp.e1_open, inp.e2_open, closing)
    return match(x, rels)


@dataclass(frozen=True)
class MatchResult:
    distances: List[float]
    probabilities: List[float]
    predicted: int
    loss: Optional[float] = None
    gold: Optional[int] = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "distances": self.distances,
                "probabilities": self.probabilities,
                "predicted": self.predicted,
                "loss": self.loss,
                "gold": self.gold,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MatchResult":
        raw = json.loads(text)
        return cls(raw["distances"], raw["probabilities"], raw["predicted"], raw.get("loss"), raw.get("gold"))


def match_result(distances, gold: Optional[int] = None) -> MatchResult:
    d = _t(distances).detach()
    p = probabilities(d)
    value = None if gold is None else float(loss_from_distances(d, gold))
    return MatchResult(d.tolist(), p.tolist(), predict(p), value, gold)
