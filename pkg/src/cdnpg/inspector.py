"""Per-layer granularity reports and their terminal rendering."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import Vocabulary, tokenize
from .model import Transformer

BUCKET_EDGES = (0.2, 0.4, 0.6, 0.8)
# blue (template-like, low z) .. red (detail-like, high z)
_ANSI = ("\x1b[44;97m", "\x1b[46;30m", "\x1b[47;30m", "\x1b[43;30m", "\x1b[41;97m")
_RESET = "\x1b[0m"


@dataclass
class GranularityReport:
    tokens: list[str]
    per_layer_z: list[list[float]]
    checkpoint_id: str
    mask_mode: str | None
    truncated: bool = False
    decoder_tokens: list[str] = field(default_factory=list)
    decoder_z: list[list[float]] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.per_layer_z), len(self.tokens)

    def buckets(self) -> list[list[int]]:
        return [bucketize(row).tolist() for row in self.per_layer_z]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GranularityReport":
        return cls(**json.loads(text))

    def validate(self) -> None:
        layers, n = self.shape
        for row in self.per_layer_z:
            if len(row) != n:
                raise ValueError(f"granularity row has {len(row)} values for {n} tokens")
            if not all(0.0 < z < 1.0 for z in row):
                raise ValueError("granularity values must lie strictly inside (0, 1)")


def bucketize(z: Sequence[float]) -> np.ndarray:
    """Index 0..4 against edges 0.2 / 0.4 / 0.6 / 0.8."""
    return np.searchsorted(np.asarray(BUCKET_EDGES), np.asarray(z, dtype=np.float64), side="right")


def render(report: GranularityReport, color: bool = True) -> str:
    """One line per layer; colored cells, or ``token(z)`` with 2 decimals."""
    lines = []
    width = max((len(t) for t in report.tokens), default=1)
    for li, (row, buckets) in enumerate(zip(report.per_layer_z, report.buckets())):
        cells = []
        for tok, z, b in zip(report.tokens, row, buckets):
            if color:
                cells.append(f"{_ANSI[b]} {tok:<{width}} {_RESET}")
            else:
                cells.append(f"{tok}({z:.2f})")
        lines.append(f"layer {li + 1}: " + " ".join(cells))
    if color:
        legend = " ".join(f"{_ANSI[i]} {lo:.1f}-{hi:.1f} {_RESET}"
                          for i, (lo, hi) in enumerate(zip((0.0,) + BUCKET_EDGES, BUCKET_EDGES + (1.0,))))
        lines.append("z:      " + legend)
    return "\n".join(lines)


def checkpoint_id(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def inspect_sentence(model: Transformer, vocab: Vocabulary, sentence: str, ckpt_id: str = "",
                     with_decoder: bool = False) -> GranularityReport:
    """Encode ``sentence`` and collect the encoder granularity of every layer."""
    if model.config.vanilla:
        raise ValueError("model has no granularity head (vanilla attention)")
    tokens = vocab.split(tokenize(sentence))
    if not tokens:
        raise ValueError("sentence is empty after tokenization")
    max_len = model.config.max_len
    truncated = len(tokens) > max_len
    tokens = tokens[:max_len]
    ids = [vocab.id(t) for t in tokens]
    was_training = model.training
    model.eval()
    try:
        with T.no_grad():
            enc = model.encode(np.asarray(ids))
        rows = [[float(v) for v in gv.z] for gv in enc.per_layer_z]
        report = GranularityReport(tokens, rows, ckpt_id,
                                   None if model.config.mask_mode is None else model.config.mask_mode.value,
                                   truncated)
        if with_decoder:
            from .decoding import greedy_decode
            from .model import BOS

            out = [t for t in greedy_decode(model, ids)]
            prefix = [BOS] + out
            report.decoder_tokens = [vocab.token(i) for i in prefix]
            report.decoder_z = [[float(v) for v in z] for z in model.decoder_z(prefix, enc)]
    finally:
        model.train(was_training)
    return report


def write_report(report: GranularityReport, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json() + "\n", encoding="utf-8")
    return path
