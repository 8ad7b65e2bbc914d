"""Command-line pipeline: forge data, pre-train, meta-train, evaluate.

Every command reads one JSON run config (``--config``; built-in defaults
otherwise), applies ``--set dotted.key=value`` overrides and writes its
artifacts plus a ``*.manifest.json`` next to them.

Exit codes: 0 ok, 1 runtime failure, 2 usage error, 3 config error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import torch

from . import __version__, fixtures
from .eval_harness import evaluate, write_results
from .matching import HeadConfig
from .model import ChoiceMatcher, HashMatcher, vocabulary_for
from .relation_core import read_corpus, sample_episode
from .training import (
    TINY_META,
    TINY_PRETRAIN,
    AdaptConfig,
    EpisodeSpec,
    TrainConfig,
    meta_train,
    pretrain,
    relabel_pool_from,
)
from .triplet_paraphrase import (
    PseudoCorpusConfig,
    build_pretraining_corpus,
    read_pseudo_corpus,
    read_raw_sentences,
    write_pseudo_corpus,
)

log = logging.getLogger("lowshot_re")

RESULTS_ENV = "LOWSHOT_RESULTS"
COMMANDS = ("forge-data", "pretrain", "meta-train", "eval", "zero-shot-eval", "selftest")

def _recipe(cfg: TrainConfig) -> Dict[str, Any]:
    out = asdict(cfg)
    out.pop("seed")  # the run-level seed is used
    return out


DEFAULT_CONFIG: Dict[str, Any] = {
    "seed": 0,
    "paths": {
        "corpus": None,  # None: the packaged synthetic corpus
        "raw": None,  # None: the packaged raw sentences
        "pseudo": "pseudo_corpus.jsonl",
        "pretrained": "pretrained.ckpt",
        "meta_trained": "meta_trained.ckpt",
        "checkpoint": None,  # eval input; defaults per command
        "results": "results",
    },
    "encoder": {
        "profile": "tiny",  # tiny | hash
        "hidden_dim": 64,
        "layers": 2,
        "heads": 8,
        "ffn_dim": 128,
        "dropout": 0.1,
        "norm": "pre",
        "pos_init": "sinusoid",
        "pos_base": 30.0,
        "max_len": 160,
    },
    "head": {"entity_pooling": "opening", "metric": "euclidean"},
    "pseudo": {"batch_size": 5, "max_predicate_tokens": 6},  # matches the 5-way prompt length
    "pretrain": _recipe(TINY_PRETRAIN),
    "meta_train": {"init": "scratch", **_recipe(TINY_META)},
    "meta_episodes": {"N": 5, "K": 1, "Q": 40, "nota_rate": 0.0, "split": "train"},
    "adapt": {"epochs": 2, "lr": 1e-3, "restore": True},
    "episodes": {"N": 5, "K": 1, "Q": 5, "nota_rate": 0.0, "count": 1000, "split": "test", "seed": 1000000},
}


class ConfigFileError(ValueError):
    pass


# ---------------------------------------------------------------- config


def load_config(path: Optional[str]) -> Dict[str, Any]:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is None:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise ConfigFileError(f"config file not found: {path}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigFileError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigFileError(f"{path}: top level must be an object")
    _merge(cfg, raw, "")
    base = p.resolve().parent
    for key, val in cfg["paths"].items():
        if isinstance(val, str) and key != "results" and not Path(val).is_absolute():
            cfg["paths"][key] = str(base / val)
    return cfg


def _merge(into: Dict[str, Any], new: Dict[str, Any], prefix: str) -> None:
    for k, v in new.items():
        if k not in into:
            raise ConfigFileError(f"unknown config key {prefix}{k}")
        if isinstance(into[k], dict):
            if not isinstance(v, dict):
                raise ConfigFileError(f"{prefix}{k} must be an object")
            _merge(into[k], v, f"{prefix}{k}.")
        else:
            into[k] = v


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: Dict[str, Any], overrides: List[str]) -> None:
    for item in overrides:
        if "=" not in item:
            raise ConfigFileError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigFileError(f"unknown config key {key}")
            node = node[part]
        if parts[-1] not in node or isinstance(node[parts[-1]], dict):
            raise ConfigFileError(f"unknown config key {key}")
        node[parts[-1]] = _parse_value(text)


def config_hash(cfg: Dict[str, Any]) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _checked(build, *args, **kwargs):
    """Call a config constructor, reporting bad values as config errors."""
    try:
        return build(*args, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(f"{getattr(build, '__name__', build)}: {exc}") from None


def _train_config(section: Dict[str, Any], seed: int) -> TrainConfig:
    fields = {k: v for k, v in section.items() if k != "init"}
    return _checked(lambda: TrainConfig(seed=seed, **fields).validate())


def _adapt_config(section: Dict[str, Any]) -> AdaptConfig:
    return _checked(lambda: AdaptConfig(**section).validate())


def _head_config(cfg) -> HeadConfig:
    return _checked(lambda: HeadConfig(**cfg["head"]).validate())


def _fresh_model(cfg, vocab) -> ChoiceMatcher:
    enc = cfg["encoder"]
    return _checked(ChoiceMatcher.create, vocab, _head_config(cfg), enc["max_len"], **_encoder_kwargs(enc, cfg["seed"]))


def _encoder_kwargs(section: Dict[str, Any], seed: int) -> Dict[str, Any]:
    kw = {k: v for k, v in section.items() if k not in ("profile", "max_len")}
    kw["seed"] = seed
    return kw


# ---------------------------------------------------------------- helpers


def _results_dir(cfg) -> Path:
    root = os.environ.get(RESULTS_ENV) or cfg["paths"]["results"]
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _versions() -> Dict[str, str]:
    return {
        "lowshot_re": __version__,
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
    }


def write_manifest(artifact: Path, command: str, cfg, runtime: float, extra: Optional[dict] = None) -> Path:
    manifest = {
        "command": command,
        "artifact": str(artifact),
        "config_hash": config_hash(cfg),
        "config": cfg,
        "seed": cfg["seed"],
        "versions": _versions(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "runtime_seconds": round(runtime, 3),
    }
    manifest.update(extra or {})
    out = Path(str(artifact) + ".manifest.json")
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _corpus(cfg):
    path = cfg["paths"]["corpus"]
    return read_corpus(path) if path else fixtures.load_corpus()


def _raw_path(cfg) -> Path:
    return Path(cfg["paths"]["raw"] or fixtures.raw_sentences_path())


def _pseudo_config(cfg) -> PseudoCorpusConfig:
    sc = cfg["pseudo"]
    for key in ("batch_size", "max_predicate_tokens"):
        if not isinstance(sc[key], int) or sc[key] < 1:
            raise ConfigFileError(f"pseudo.{key} must be a positive integer, got {sc[key]!r}")
    return PseudoCorpusConfig(sc["batch_size"], cfg["seed"], sc["max_predicate_tokens"])


def _pseudo_batches(cfg):
    pseudo = Path(cfg["paths"]["pseudo"])
    if pseudo.exists():
        return read_pseudo_corpus(pseudo)
    return build_pretraining_corpus(read_raw_sentences(_raw_path(cfg)), _pseudo_config(cfg))


def _trace_path(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.stem + ".trace.csv")


# ---------------------------------------------------------------- commands


def cmd_forge_data(cfg, args) -> int:
    start = time.perf_counter()
    if args.fixtures:
        fixtures.write_fixtures(args.fixtures)
        print(f"wrote fixtures to {args.fixtures}")
    batches = build_pretraining_corpus(read_raw_sentences(_raw_path(cfg)), _pseudo_config(cfg))
    out = Path(cfg["paths"]["pseudo"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pseudo_corpus(batches, out)
    n = sum(len(b.instances) for b in batches)
    write_manifest(out, "forge-data", cfg, time.perf_counter() - start, {"batches": len(batches), "instances": n})
    print(f"wrote {n} pseudo instances in {len(batches)} batches to {out}")
    return 0


def cmd_pretrain(cfg, args) -> int:
    start = time.perf_counter()
    batches = _pseudo_batches(cfg)
    corpus = _corpus(cfg)
    insts = [p.to_relation_instance() for b in batches for p in b.instances]
    vocab = vocabulary_for(
        insts, [r for b in batches for r in b.relation_types()], corpus.instances, corpus.relations.values()
    )
    model = _fresh_model(cfg, vocab)
    tc = _train_config(cfg["pretrain"], cfg["seed"])
    model, trace = pretrain(model, batches, tc, relabel_pool_from(insts))
    out = Path(cfg["paths"]["pretrained"])
    out.parent.mkdir(parents=True, exist_ok=True)
    tag = {"command": "pretrain", "config_hash": config_hash(cfg)}
    model.save(out, tag)
    trace.write_csv(_trace_path(out))
    write_manifest(out, "pretrain", cfg, time.perf_counter() - start, {"steps": len(trace.rows)})
    print(f"pretrained {len(trace.rows)} steps, final loss {trace.losses[-1]:.4f}; checkpoint {out}")
    return 0


def cmd_meta_train(cfg, args) -> int:
    start = time.perf_counter()
    corpus = _corpus(cfg)
    section = cfg["meta_train"]
    init = section.get("init", "scratch")
    if init == "pretrained":
        model = ChoiceMatcher.load(cfg["paths"]["pretrained"])
    elif init == "scratch":
        model = _fresh_model(cfg, vocabulary_for(corpus.instances, corpus.relations.values()))
    else:
        raise ConfigFileError(f"meta_train.init must be scratch or pretrained, got {init!r}")
    spec = _checked(EpisodeSpec, **cfg["meta_episodes"])
    train_insts = [corpus.instances[i] for r in corpus.relations_in(spec.split) for i in corpus.by_relation()[r]]
    model, trace = meta_train(model, corpus, spec, _train_config(section, cfg["seed"]), relabel_pool_from(train_insts))
    out = Path(cfg["paths"]["meta_trained"])
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out, {"command": "meta-train", "config_hash": config_hash(cfg)})
    trace.write_csv(_trace_path(out))
    write_manifest(out, "meta-train", cfg, time.perf_counter() - start, {"steps": len(trace.rows)})
    print(f"meta-trained {len(trace.rows)} steps, final loss {trace.losses[-1]:.4f}; checkpoint {out}")
    return 0


def _evaluate(cfg, args, command: str, default_ckpt: str, zero_shot: bool) -> int:
    start = time.perf_counter()
    corpus = _corpus(cfg)
    ep_cfg = dict(cfg["episodes"])
    if zero_shot:
        ep_cfg["K"] = 0
    adapt = _adapt_config(cfg["adapt"])
    if ep_cfg["K"] == 0:
        adapt = AdaptConfig(0, adapt.lr, adapt.restore)  # nothing to adapt on
    enc = cfg["encoder"]
    if enc["profile"] == "hash":
        vocab = vocabulary_for(corpus.instances, corpus.relations.values())
        model = HashMatcher(vocab, enc["hidden_dim"], _head_config(cfg), enc["max_len"])
    elif enc["profile"] == "tiny":
        ckpt = cfg["paths"]["checkpoint"] or cfg["paths"][default_ckpt]
        if not Path(ckpt).is_file():
            raise ConfigFileError(f"checkpoint not found: {ckpt}")
        model = ChoiceMatcher.load(ckpt)
    else:
        raise ConfigFileError(f"unknown encoder profile {enc['profile']!r}")
    episodes = [
        sample_episode(corpus, ep_cfg["split"], ep_cfg["N"], ep_cfg["K"], ep_cfg["Q"], ep_cfg["nota_rate"], ep_cfg["seed"] + i)
        for i in range(ep_cfg["count"])
    ]
    result = evaluate(model, episodes, adapt, workers=args.workers)
    h = config_hash(cfg)
    name = f"{command}-N{ep_cfg['N']}-K{ep_cfg['K']}-nota{ep_cfg['nota_rate']}-{h}.json"
    out = _results_dir(cfg) / name
    write_results(result, out, {"command": command, "config_hash": h, "adapt_epochs": adapt.epochs})
    write_manifest(out, command, cfg, time.perf_counter() - start)
    print(f"{command}: acc {result.mean:.4f} ci {result.ci:.4f} std {result.std:.4f} over {result.episodes} episodes -> {out}")
    return 0


def cmd_eval(cfg, args) -> int:
    return _evaluate(cfg, args, "eval", "meta_trained", zero_shot=False)


def cmd_zero_shot_eval(cfg, args) -> int:
    return _evaluate(cfg, args, "zero-shot-eval", "pretrained", zero_shot=True)


def cmd_selftest(cfg, args) -> int:
    from .selftest import run_all

    failures = run_all(print)
    return 1 if failures else 0


HANDLERS = {
    "forge-data": cmd_forge_data,
    "pretrain": cmd_pretrain,
    "meta-train": cmd_meta_train,
    "eval": cmd_eval,
    "zero-shot-eval": cmd_zero_shot_eval,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowshot-re", description="Low-shot relation extraction pipeline.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config", nargs="?", help="JSON run config (defaults built in)")
    parser.add_argument("--config", dest="config_opt", help="same as the positional config")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--workers", type=int, default=1, help="parallel episode evaluation")
    parser.add_argument("--fixtures", help="forge-data: also regenerate the synthetic fixtures here")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config_opt or args.config)
        apply_overrides(cfg, args.overrides)
        torch.manual_seed(cfg["seed"])
        return HANDLERS[args.command](cfg, args)
    except ConfigFileError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - mapped to exit status 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
