"""BLEU, iBLEU and ROUGE-L over token lists.

Sentence-level BLEU smooths orders n >= 2 that have no matching n-gram by
adding one to both the match count and the candidate n-gram count.  Corpus
BLEU sums clipped counts over all records first and is not smoothed.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

Tokens = Sequence[str]


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _clipped(candidate: Tokens, references: Sequence[Tokens], n: int) -> tuple[int, int]:
    cand = ngrams(candidate, n)
    best: Counter = Counter()
    for ref in references:
        for g, c in ngrams(ref, n).items():
            if c > best[g]:
                best[g] = c
    matched = sum(min(c, best[g]) for g, c in cand.items())
    return matched, max(len(candidate) - n + 1, 0)


def _closest_ref_len(candidate: Tokens, references: Sequence[Tokens]) -> int:
    c = len(candidate)
    return min((abs(len(r) - c), len(r)) for r in references)[1]


def brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    if cand_len > ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / cand_len)


def _normalize_refs(references) -> list[Tokens]:
    if references and isinstance(references[0], str):
        return [references]
    return list(references)


def sentence_bleu(candidate: Tokens, references: Tokens | Sequence[Tokens], max_n: int = 4) -> float:
    """Smoothed BLEU of one candidate against one or more references."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    refs = _normalize_refs(references)
    if not candidate or not refs or not any(refs):
        warnings.warn("empty candidate or reference; BLEU is 0", stacklevel=2)
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched, total = _clipped(candidate, refs, n)
        if n >= 2 and matched == 0:
            matched, total = 1, total + 1
        if matched == 0:
            return 0.0
        log_sum += math.log(matched / total) / max_n
    return brevity_penalty(len(candidate), _closest_ref_len(candidate, refs)) * math.exp(log_sum)


def corpus_bleu(candidates: Sequence[Tokens], references: Sequence[Tokens | Sequence[Tokens]],
                max_n: int = 4) -> float:
    """Corpus BLEU: clipped counts and lengths summed over records, no smoothing."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} reference sets")
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    matched = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, refs in zip(candidates, references):
        refs = _normalize_refs(refs)
        if not cand:
            warnings.warn("empty candidate in corpus BLEU", stacklevel=2)
        cand_len += len(cand)
        if refs and any(refs):
            ref_len += _closest_ref_len(cand, refs)
        for n in range(1, max_n + 1):
            m, t = _clipped(cand, refs, n)
            matched[n - 1] += m
            totals[n - 1] += t
    if cand_len == 0 or any(m == 0 for m in matched):
        return 0.0
    log_sum = sum(math.log(m / t) for m, t in zip(matched, totals)) / max_n
    return brevity_penalty(cand_len, ref_len) * math.exp(log_sum)


def bleu(candidates, references, max_n: int = 4) -> float:
    """Sentence BLEU for a single token list, corpus BLEU for a list of them."""
    if not candidates or isinstance(candidates[0], str):
        return sentence_bleu(candidates, references, max_n)
    return corpus_bleu(candidates, references, max_n)


def ibleu(candidate, reference, source, alpha: float = 0.9) -> float:
    """``alpha * BLEU(cand, ref) - (1 - alpha) * BLEU(cand, source)`` with BLEU-4."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * bleu(candidate, reference, 4) - (1.0 - alpha) * bleu(candidate, source, 4)


def corpus_ibleu(candidates, references, sources, alpha: float = 0.9) -> float:
    return alpha * corpus_bleu(candidates, references, 4) - (1.0 - alpha) * corpus_bleu(candidates, sources, 4)


def lcs_lengths(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise LCS lengths of two integer matrices ``[P, La]`` and ``[P, Lb]``.

    Padding must use values that never match across the two sides (e.g. -1 in
    ``a`` and -2 in ``b``).  The DP runs over positions and is vectorized over
    the ``P`` pairs.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"expected [P, La] and [P, Lb] arrays, got {a.shape} and {b.shape}")
    p, lb = a.shape[0], b.shape[1]
    dtype = np.int16 if min(a.shape[1], lb) < 2**15 else np.int64
    prev = np.zeros((p, lb + 1), dtype=dtype)
    for i in range(a.shape[1]):
        cur = np.zeros_like(prev)
        ai = a[:, i]
        for j in range(lb):
            cur[:, j + 1] = np.where(ai == b[:, j], prev[:, j] + 1, np.maximum(prev[:, j + 1], cur[:, j]))
        prev = cur
    return prev[:, lb].astype(np.int64)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, reference: Tokens | Sequence[Tokens], beta: float = 1.2) -> float:
    """LCS F-measure ``(1 + b^2) P R / (R + b^2 P)``; best over multiple references."""
    refs = _normalize_refs(reference)
    if not candidate or not refs or not any(refs):
        warnings.warn("empty input to ROUGE-L; score is 0", stacklevel=2)
        return 0.0
    best = 0.0
    for ref in refs:
        lcs = lcs_length(candidate, ref)
        if lcs == 0 or not ref:
            continue
        p, r = lcs / len(candidate), lcs / len(ref)
        best = max(best, (1 + beta**2) * p * r / (r + beta**2 * p))
    return best


@dataclass
class EvalRecord:
    source: list[str]
    references: list[list[str]]
    candidate: list[str]

    def scores(self, alpha: float = 0.9) -> dict:
        return {
            "bleu2": sentence_bleu(self.candidate, self.references, 2),
            "bleu4": sentence_bleu(self.candidate, self.references, 4),
            "ibleu": alpha * sentence_bleu(self.candidate, self.references, 4)
            - (1 - alpha) * sentence_bleu(self.candidate, [self.source], 4),
            "rouge_l": rouge_l(self.candidate, self.references),
        }


def evaluate(records: Sequence[EvalRecord], alpha: float = 0.9) -> dict:
    """Corpus report ``{bleu2, bleu4, ibleu, rouge_l, n_records}``."""
    if not records:
        raise ValueError("no records to evaluate")
    cands = [r.candidate for r in records]
    refs = [r.references for r in records]
    srcs = [[r.source] for r in records]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rouge = sum(rouge_l(r.candidate, r.references) for r in records) / len(records)
    return {
        "bleu2": corpus_bleu(cands, refs, 2),
        "bleu4": corpus_bleu(cands, refs, 4),
        "ibleu": corpus_ibleu(cands, refs, srcs, alpha),
        "rouge_l": rouge,
        "n_records": len(records),
    }
