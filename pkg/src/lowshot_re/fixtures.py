"""Paths to the committed synthetic fixtures and their regeneration."""

from __future__ import annotations

from pathlib import Path

from .relation_core import read_corpus, write_corpus
from .synthetic import make_raw_sentences, make_relation_corpus

DATA_DIR = Path(__file__).parent / "data"
CORPUS_NAME = "synthetic_relations.jsonl"
RAW_NAME = "raw_sentences.txt"


def corpus_path() -> Path:
    return DATA_DIR / CORPUS_NAME


def raw_sentences_path() -> Path:
    return DATA_DIR / RAW_NAME


def load_corpus():
    return read_corpus(corpus_path())


def write_fixtures(directory) -> None:
    """Regenerate both fixtures into ``directory`` (byte-identical to the committed ones)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_corpus(make_relation_corpus(), directory / CORPUS_NAME)
    with open(directory / RAW_NAME, "w", encoding="utf-8") as fh:
        for line in make_raw_sentences():
            fh.write(line + "\n")
