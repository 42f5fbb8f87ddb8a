"""Tokenization, vocabularies, paraphrase corpora and padded batches."""

from __future__ import annotations

import json
import logging
import os
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .model import BOS, EOS, PAD, UNK

log = logging.getLogger(__name__)

RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, then split into word runs and single punctuation marks.

    >>> tokenize("What is AI?")
    ['what', 'is', 'ai', '?']
    """
    if not text:
        return []
    text = unicodedata.normalize("NFKC", text).lower()
    return _TOKEN_RE.findall(text)


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


class Vocabulary:
    """Token/id bijection with PAD=0, BOS=1, EOS=2, UNK=3 reserved."""

    def __init__(self, tokens: Iterable[str] = (), wordpiece: bool = False):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        self.wordpiece = wordpiece
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.itos[idx] if 0 <= idx < len(self.itos) else RESERVED[UNK]

    def split(self, tokens: Sequence[str]) -> list[str]:
        """Apply WordPiece splitting when loaded from a subword vocabulary."""
        if not self.wordpiece:
            return list(tokens)
        out: list[str] = []
        for tok in tokens:
            out.extend(wordpiece_split(tok, self.stoi))
        return out

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in self.split(tokens)]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.token(i))
        if self.wordpiece:
            merged: list[str] = []
            for t in out:
                if t.startswith("##") and merged:
                    merged[-1] += t[2:]
                else:
                    merged.append(t)
            out = merged
        return out

    def save(self, path: str | os.PathLike) -> None:
        """One token per line; line k holds id ``k + 4``."""
        Path(path).write_text("".join(t + "\n" for t in self.itos[len(RESERVED):]), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike, wordpiece: bool = False) -> "Vocabulary":
        vocab = cls(wordpiece=wordpiece)
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            tok = line.rstrip("\n")
            if tok and tok not in RESERVED:
                vocab.add(tok)
        return vocab

    @classmethod
    def load_wordpiece(cls, path: str | os.PathLike) -> "Vocabulary":
        """Load an external subword vocabulary (``##`` marks continuations).

        BERT-style bracketed specials such as ``[PAD]`` are dropped; our own
        reserved ids stay fixed.
        """
        vocab = cls(wordpiece=True)
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            tok = line.strip()
            if not tok or (tok.startswith("[") and tok.endswith("]")):
                continue
            vocab.add(tok)
        return vocab


def wordpiece_split(word: str, table: dict[str, int], unk: str = "<unk>", max_chars: int = 100) -> list[str]:
    """Greedy longest-match-first subword split with ``##`` continuations."""
    if len(word) > max_chars:
        return [unk]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while start < end:
            cand = word[start:end]
            if start > 0:
                cand = "##" + cand
            if cand in table:
                piece = cand
                break
            end -= 1
        if piece is None:
            return [unk]
        pieces.append(piece)
        start = end
    return pieces


def build_vocab(corpus: Iterable[Sequence[str]], max_size: int | None = None, min_freq: int = 1) -> Vocabulary:
    """Keep the most frequent tokens (ties broken lexicographically)."""
    counts: Counter[str] = Counter()
    n = 0
    for toks in corpus:
        counts.update(toks)
        n += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED),
                    key=lambda t: (-counts[t], t))
    if max_size is not None:
        ranked = ranked[: max(0, max_size - len(RESERVED))]
    return Vocabulary(ranked)


@dataclass
class ParaphrasePair:
    source: str
    target: str
    split: str | None = None
    source_tokens: list[str] = field(default_factory=list, repr=False)
    target_tokens: list[str] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.source_tokens:
            self.source_tokens = tokenize(self.source)
        if not self.target_tokens:
            self.target_tokens = tokenize(self.target)
        if not self.source_tokens or not self.target_tokens:
            raise ValueError("paraphrase pair has an empty side after normalization")


@dataclass
class LoadReport:
    path: str
    loaded: int
    skipped: int
    problems: list[str] = field(default_factory=list)


class DatasetError(ValueError):
    pass


def load_dataset(path: str | os.PathLike, format: str | None = None,
                 max_bad_fraction: float = 0.1) -> tuple[list[ParaphrasePair], LoadReport]:
    """Read ``source<TAB>target`` TSV or ``{"source", "target"}`` JSONL.

    Malformed lines are skipped and listed in the report; more than 10% of
    them is an error.
    """
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix.lower() in (".jsonl", ".json") else "tsv"
    if format not in ("tsv", "jsonl"):
        raise DatasetError(f"unknown dataset format {format!r}; expected tsv or jsonl")
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc.strerror or exc}") from None

    pairs: list[ParaphrasePair] = []
    problems: list[str] = []
    total = 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        total += 1
        try:
            if format == "tsv":
                parts = line.split("\t")
                if len(parts) < 2:
                    raise ValueError("missing TAB separator")
                split = parts[2].strip() or None if len(parts) > 2 else None
                pairs.append(ParaphrasePair(parts[0].strip(), parts[1].strip(), split))
            else:
                rec = json.loads(line)
                if not isinstance(rec, dict) or not isinstance(rec.get("source"), str) \
                        or not isinstance(rec.get("target"), str):
                    raise ValueError("record needs string fields 'source' and 'target'")
                pairs.append(ParaphrasePair(rec["source"], rec["target"], rec.get("split")))
        except (ValueError, json.JSONDecodeError) as exc:
            problems.append(f"line {lineno}: {exc}")
    report = LoadReport(str(path), len(pairs), len(problems), problems)
    if problems:
        log.warning("%s: skipped %d malformed line(s)", path, len(problems))
    if total and len(problems) / total > max_bad_fraction:
        raise DatasetError(f"{path}: {len(problems)} of {total} lines malformed (> {max_bad_fraction:.0%})")
    return pairs, report


def split_pairs(pairs: Sequence[ParaphrasePair], valid: int, test: int, seed: int = 0):
    """Seeded shuffle into (train, valid, test)."""
    order = np.random.default_rng(seed).permutation(len(pairs))
    shuffled = [pairs[i] for i in order]
    return shuffled[valid + test:], shuffled[:valid], shuffled[valid:valid + test]


def encode_source(tokens: Sequence[str], vocab: Vocabulary, max_len: int) -> list[int]:
    return vocab.encode(tokens)[:max_len]


def encode_target(tokens: Sequence[str], vocab: Vocabulary, max_len: int) -> list[int]:
    """Content truncated to ``max_len - 1`` ids, then EOS."""
    return vocab.encode(tokens)[: max_len - 1] + [EOS]


def pad(seqs: Sequence[Sequence[int]], width: int | None = None) -> np.ndarray:
    width = width or max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


@dataclass
class Batch:
    """``tgt_in`` is BOS + target; ``tgt_out`` is target + EOS (PAD-padded)."""

    src: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    index: np.ndarray

    def __len__(self) -> int:
        return self.src.shape[0]


def make_batch(pairs: Sequence[ParaphrasePair], vocab: Vocabulary, max_len: int, index=None) -> Batch:
    src = [encode_source(p.source_tokens, vocab, max_len) for p in pairs]
    tgt = [encode_target(p.target_tokens, vocab, max_len) for p in pairs]
    tgt_in = [[BOS] + t[:-1] for t in tgt]
    idx = np.arange(len(pairs)) if index is None else np.asarray(index)
    return Batch(pad(src), pad(tgt_in), pad(tgt), idx)


def make_batches(pairs: Sequence[ParaphrasePair], vocab: Vocabulary, batch_size: int, max_len: int,
                 seed: int | None = None) -> Iterator[Batch]:
    """Padded batches in seeded-shuffled order (input order when ``seed`` is None)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(pairs)) if seed is None else np.random.default_rng(seed).permutation(len(pairs))
    for lo in range(0, len(order), batch_size):
        idx = order[lo: lo + batch_size]
        yield make_batch([pairs[i] for i in idx], vocab, max_len, idx)
