"""Greedy and length-normalized beam-search decoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .model import BOS, EOS, Transformer

StepFn = Callable[[np.ndarray], np.ndarray]
"""Maps ``[k, t]`` generated-token prefixes (BOS excluded) to ``[k, V]`` next-token log-probs."""


@dataclass
class Hypothesis:
    token_ids: tuple[int, ...]
    log_prob: float
    finished: bool = False
    score: float = 0.0

    def __len__(self) -> int:
        return len(self.token_ids)


def normalized_score(log_prob: float, length: int, alpha: float = 1.0) -> float:
    return log_prob / (max(length, 1) ** alpha)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    x = x - x.max(axis=-1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=-1, keepdims=True))


def model_step_fn(model: Transformer, src_ids: Sequence[int]) -> StepFn:
    """Encode ``src_ids`` once; return a step function over decoder prefixes."""
    with T.no_grad():
        memory = model.encode(np.asarray(src_ids, dtype=np.int64))

    def step(prefixes: np.ndarray) -> np.ndarray:
        k = prefixes.shape[0]
        tgt = np.concatenate([np.full((k, 1), BOS, dtype=np.int64), prefixes.astype(np.int64)], axis=1)
        with T.no_grad():
            logits = model.decode(tgt, memory)
        return _log_softmax(logits.data[:, -1, :])

    return step


def _check_source(src_ids) -> None:
    if len(src_ids) == 0:
        raise ValueError("source sequence is empty")


def greedy_search(step: StepFn, max_len: int, eos_id: int = EOS) -> list[int]:
    """Argmax per step (lowest id on ties) until EOS or ``max_len`` tokens."""
    out: list[int] = []
    while len(out) < max_len:
        logp = step(np.asarray([out], dtype=np.int64).reshape(1, len(out)))[0]
        tok = int(np.argmax(logp))
        out.append(tok)
        if tok == eos_id:
            break
    return out


def greedy_decode(model: Transformer, src_ids: Sequence[int], max_len: int | None = None) -> list[int]:
    _check_source(src_ids)
    was_training = model.training
    model.eval()
    try:
        return greedy_search(model_step_fn(model, src_ids), max_len or model.config.max_len)
    finally:
        model.train(was_training)


def beam_search_fn(step: StepFn, beam_size: int, max_len: int, eos_id: int = EOS,
                   alpha: float = 1.0) -> list[Hypothesis]:
    """Beam search over any next-token distribution.

    Each round expands every live hypothesis by every token, keeps the
    ``beam_size`` best candidates by ``log_prob / len ** alpha`` (ties: token
    sequence, lexicographically), and retires candidates ending in EOS to the
    finished pool.  The pool plus whatever is still live at ``max_len`` is
    returned best first.
    """
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    live = [Hypothesis((), 0.0)]
    pool: list[Hypothesis] = []
    for t in range(max_len):
        prefixes = np.asarray([h.token_ids for h in live], dtype=np.int64).reshape(len(live), t)
        logp = step(prefixes)
        vocab = logp.shape[-1]
        total = np.asarray([h.log_prob for h in live])[:, None] + logp
        scores = total / ((t + 1) ** alpha)
        # rank by score desc, then by (parent sequence, token) asc; live is kept sorted by sequence
        order = sorted(range(len(live)), key=lambda i: live[i].token_ids)
        flat = []
        for rank, i in enumerate(order):
            for tok in range(vocab):
                flat.append((-scores[i, tok], rank, tok, i))
        flat.sort()
        chosen = flat[:beam_size]
        nxt = []
        for neg_score, _, tok, i in chosen:
            hyp = Hypothesis(live[i].token_ids + (tok,), float(total[i, tok]), score=float(-neg_score))
            if tok == eos_id or t + 1 == max_len:
                hyp.finished = True
                pool.append(hyp)
            else:
                nxt.append(hyp)
        live = nxt
        if not live:
            break
    ranked = pool + live
    ranked.sort(key=lambda h: (-h.score, h.token_ids))
    return ranked


def beam_search(model: Transformer, src_ids: Sequence[int], beam_size: int = 8,
                max_len: int | None = None, alpha: float = 1.0) -> list[Hypothesis]:
    _check_source(src_ids)
    was_training = model.training
    model.eval()
    try:
        return beam_search_fn(model_step_fn(model, src_ids), beam_size, max_len or model.config.max_len,
                              EOS, alpha)
    finally:
        model.train(was_training)


def enumerate_sequences(step: StepFn, vocab_size: int, max_len: int, eos_id: int = EOS,
                        alpha: float = 1.0) -> list[Hypothesis]:
    """Every complete sequence (EOS-terminated, or exactly ``max_len`` long), scored.

    Brute force; only for tiny vocabularies.
    """
    out: list[Hypothesis] = []
    frontier = [((), 0.0)]
    for t in range(max_len):
        nxt = []
        for prefix, lp in frontier:
            logp = step(np.asarray([prefix], dtype=np.int64).reshape(1, t))[0]
            for tok in range(vocab_size):
                seq, total = prefix + (tok,), lp + float(logp[tok])
                if tok == eos_id or t + 1 == max_len:
                    out.append(Hypothesis(seq, total, True, normalized_score(total, len(seq), alpha)))
                else:
                    nxt.append((seq, total))
        frontier = nxt
    out.sort(key=lambda h: (-h.score, h.token_ids))
    return out
