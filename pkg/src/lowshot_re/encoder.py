"""Sequence encoders: a small trainable transformer and a hash test backend.

The trainable encoder is a pre-norm bidirectional transformer with learned
absolute positions (post-norm is available through ``norm``). With zero
layers it is exactly token + position lookup.
"""

from __future__ import annotations

import hashlib
import json
import math
import zipfile
from dataclasses import asdict, dataclass, fields
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .prompt_codec import PAD, ModelInput, special_id

PAD_ID = special_id(PAD)
CHECKPOINT_FORMAT = "lowshot-re-encoder/1"


class EncoderError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


class LengthError(EncoderError):
    pass


class NonFiniteError(EncoderError):
    pass


class NonFiniteGradientError(EncoderError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 64
    layers: int = 2
    heads: int = 8
    ffn_dim: int = 128
    max_positions: int = 160
    dropout: float = 0.1
    seed: int = 0
    dtype: str = "float32"
    norm: str = "pre"
    pos_init: str = "sinusoid"  # or "uniform"
    pos_base: float = 30.0

    def validate(self) -> "EncoderConfig":
        for name in ("vocab_size", "hidden_dim", "heads", "ffn_dim", "max_positions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")
        if self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")
        if self.norm not in ("post", "pre"):
            raise ConfigError(f"norm must be post or pre, got {self.norm!r}")
        if self.pos_init not in ("sinusoid", "uniform"):
            raise ConfigError(f"pos_init must be sinusoid or uniform, got {self.pos_init!r}")
        if self.pos_base <= 1.0:
            raise ConfigError("pos_base must be > 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype}")
        return self

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    @classmethod
    def from_dict(cls, raw: Mapping) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in raw.items() if k in known})


def expected_param_count(cfg: EncoderConfig) -> int:
    d, f = cfg.hidden_dim, cfg.ffn_dim
    per_layer = (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d) + 2 * d
    return cfg.vocab_size * d + cfg.max_positions * d + cfg.layers * per_layer


def _dropout(x: torch.Tensor, p: float, gen: Optional[torch.Generator]) -> torch.Tensor:
    if gen is None or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=gen, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.hidden_dim
        self.heads = cfg.heads
        self.p = cfg.dropout
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.norm1 = nn.LayerNorm(d)
        self.ff_in = nn.Linear(d, cfg.ffn_dim)
        self.ff_out = nn.Linear(cfg.ffn_dim, d)
        self.norm2 = nn.LayerNorm(d)
        self.pre = cfg.norm == "pre"

    def forward(self, x, key_pad, gen=None):
        if self.pre:
            x = x + _dropout(self._attend(self.norm1(x), key_pad), self.p, gen)
            return x + _dropout(self._feed(self.norm2(x)), self.p, gen)
        x = self.norm1(x + _dropout(self._attend(x, key_pad), self.p, gen))
        return self.norm2(x + _dropout(self._feed(x), self.p, gen))

    def _feed(self, x):
        return self.ff_out(torch.nn.functional.gelu(self.ff_in(x)))

    def _attend(self, x, key_pad):
        B, L, d = x.shape
        hd = d // self.heads
        q, k, v = self.qkv(x).split(d, dim=-1)
        q, k, v = (t.view(B, L, self.heads, hd).transpose(1, 2) for t in (q, k, v))
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        if key_pad is not None:
            scores = scores.masked_fill(key_pad[:, None, None, :], float("-inf"))
        att = torch.softmax(scores, dim=-1) @ v
        return self.out(att.transpose(1, 2).reshape(B, L, d))


class TinyTransformer(nn.Module):
    """Trainable encoder; its parameters are the model's full weight set."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.config = cfg.validate()
        self.tok = nn.Embedding(cfg.vocab_size, cfg.hidden_dim)
        self.pos = nn.Embedding(cfg.max_positions, cfg.hidden_dim)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))

    def forward(self, ids: torch.Tensor, key_pad=None, gen=None) -> torch.Tensor:
        L = ids.shape[-1]
        if L > self.config.max_positions:
            raise LengthError(f"length {L} exceeds max_positions {self.config.max_positions}")
        x = self.tok(ids) + self.pos(torch.arange(L))
        for layer in self.layers:
            x = layer(x, key_pad, gen)
        return x


def sinusoid_table(positions: int, d: int, base: float) -> torch.Tensor:
    """sin/cos pairs at geometric frequencies; row p starts the learned table."""
    pos = torch.arange(positions, dtype=torch.float64)[:, None]
    freq = base ** (torch.arange(0, d, 2, dtype=torch.float64) / d)
    table = torch.zeros(positions, d, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos / freq)
    table[:, 1::2] = torch.cos(pos / freq)[:, : d // 2]
    return table


def init_params(cfg: EncoderConfig) -> TinyTransformer:
    """Build an encoder with deterministic weights.

    Linear maps are U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with zero bias, norms
    start at ones/zeros, token embeddings are U(-sqrt(3), sqrt(3)). Position
    embeddings start from a sinusoid table (short wavelengths, which makes
    "look at my neighbour" easy to find) or U(-sqrt(3)/2, sqrt(3)/2).
    """
    cfg.validate()
    model = TinyTransformer(cfg).to(cfg.torch_dtype)
    gen = torch.Generator().manual_seed(cfg.seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name == "tok.weight":
                p.uniform_(-math.sqrt(3), math.sqrt(3), generator=gen)
            elif name == "pos.weight" and cfg.pos_init == "sinusoid":
                p.copy_(sinusoid_table(cfg.max_positions, cfg.hidden_dim, cfg.pos_base))
            elif name == "pos.weight":
                p.uniform_(-math.sqrt(3) / 2, math.sqrt(3) / 2, generator=gen)
            elif ".norm" in name:
                p.fill_(1.0 if name.endswith("weight") else 0.0)
            elif name.endswith("bias"):
                p.zero_()
            else:
                bound = 1.0 / math.sqrt(p.shape[1])
                p.uniform_(-bound, bound, generator=gen)
    return model


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def pad_batch(inputs: Sequence[ModelInput]):
    L = max(len(x) for x in inputs)
    ids = torch.full((len(inputs), L), PAD_ID, dtype=torch.long)
    for b, x in enumerate(inputs):
        ids[b, : len(x)] = torch.tensor(x.ids, dtype=torch.long)
    key_pad = ids == PAD_ID
    return ids, key_pad


def encode_batch(
    model: TinyTransformer,
    inputs: Sequence[ModelInput],
    mode: str = "eval",
    dropout_seed: Optional[int] = None,
) -> torch.Tensor:
    """Encode several inputs at once; returns (B, L_max, d) with pad rows."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    ids, key_pad = pad_batch(inputs)
    gen = None
    if mode == "train":
        gen = torch.Generator()
        gen.manual_seed(0 if dropout_seed is None else dropout_seed)
    out = model(ids, key_pad if key_pad.any() else None, gen)
    if not torch.isfinite(out).all():
        raise NonFiniteError("encoder produced non-finite values")
    return out


def encode(model, inp: ModelInput, mode: str = "eval", dropout_seed: Optional[int] = None):
    return encode_batch(model, [inp], mode, dropout_seed)[0]


def hash_vector(token_id: int, d: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{token_id}:{d}".encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def encode_hash(inp: ModelInput, d: int) -> np.ndarray:
    """Position-free test backend: row p is a fixed unit vector for ids[p]."""
    cache: Dict[int, np.ndarray] = {}
    rows = []
    for t in inp.ids:
        if t not in cache:
            cache[t] = hash_vector(t, d)
        rows.append(cache[t])
    return np.stack(rows)


def gradients(
    model: TinyTransformer,
    inp: ModelInput,
    loss_fn: Callable[[torch.Tensor], torch.Tensor],
    mode: str = "eval",
    dropout_seed: Optional[int] = None,
) -> Dict[str, torch.Tensor]:
    """Gradient of ``loss_fn(encode(model, inp))`` for every named parameter."""
    model.zero_grad(set_to_none=True)
    loss = loss_fn(encode(model, inp, mode, dropout_seed))
    if not torch.is_tensor(loss):
        loss = torch.as_tensor(loss, dtype=model.config.torch_dtype)
    if not torch.isfinite(loss):
        raise NonFiniteGradientError("loss is non-finite")
    names = [n for n, _ in model.named_parameters()]
    params = [p for _, p in model.named_parameters()]
    grads = torch.autograd.grad(loss, params, allow_unused=True) if loss.requires_grad else [None] * len(params)
    out = {}
    for n, p, g in zip(names, params, grads):
        g = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient for {n}")
        out[n] = g
    return out


# -- snapshots, digests and checkpoints ---------------------------------------


def snapshot(model: nn.Module) -> Dict[str, torch.Tensor]:
    return {n: t.detach().clone() for n, t in model.state_dict().items()}


def restore(model: nn.Module, snap: Mapping[str, torch.Tensor]) -> None:
    with torch.no_grad():
        for n, t in model.state_dict().items():
            t.copy_(snap[n])


def params_digest(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(model.state_dict().items()):
        arr = t.detach().cpu().numpy()
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def save_checkpoint(model: TinyTransformer, path, extra: Optional[dict] = None) -> None:
    """Zip archive: ``header.json`` plus one little-endian float32 blob per tensor."""
    state = model.state_dict()
    names = sorted(state)
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "tensors": [{"name": n, "shape": list(state[n].shape)} for n in names],
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("header.json", json.dumps(header, indent=1, sort_keys=True))
        for n in names:
            arr = state[n].detach().cpu().numpy().astype("<f4")
            zf.writestr(f"tensors/{n}", arr.tobytes())


def load_checkpoint(path):
    """Return ``(model, extra)`` from a checkpoint written by save_checkpoint."""
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path}: not an encoder checkpoint")
        cfg = EncoderConfig.from_dict(header["config"])
        model = TinyTransformer(cfg).to(cfg.torch_dtype)
        state = {}
        for entry in header["tensors"]:
            raw = zf.read(f"tensors/{entry['name']}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
            state[entry["name"]] = torch.from_numpy(arr.copy()).to(cfg.torch_dtype)
    model.load_state_dict(state)
    return model, header.get("extra", {})

