"""Independent reference implementations used only by the tests."""

import itertools
from fractions import Fraction

import numpy as np


def count_ngrams(tokens, n):
    """List of n-gram tuples (with repeats), built with a plain loop."""
    grams = []
    for i in range(len(tokens) - n + 1):
        grams.append(tuple(tokens[i:i + n]))
    return grams


def clipped_precision(cand, refs, n):
    grams = count_ngrams(cand, n)
    matched = 0
    for g in set(grams):
        ref_max = max(count_ngrams(r, n).count(g) for r in refs)
        matched += min(grams.count(g), ref_max)
    return matched, len(grams)


def sentence_bleu_oracle(cand, refs, max_n):
    """Exact-fraction BLEU with add-one on zero-match orders n >= 2."""
    if not cand:
        return 0.0
    product = Fraction(1)
    for n in range(1, max_n + 1):
        m, t = clipped_precision(cand, refs, n)
        if m == 0:
            if n == 1:
                return 0.0
            m, t = 1, t + 1
        product *= Fraction(m, t)
    ref_len = sorted(refs, key=lambda r: (abs(len(r) - len(cand)), len(r)))[0]
    bp = 1.0 if len(cand) > len(ref_len) else float(np.exp(1 - len(ref_len) / len(cand)))
    return bp * float(product) ** (1.0 / max_n)


def lcs_brute_force(a, b):
    """Longest common subsequence by enumerating subsequences of ``a`` longest first."""
    b = tuple(b)
    for k in range(min(len(a), len(b)), 0, -1):
        for idx in itertools.combinations(range(len(a)), k):
            it = iter(b)
            if all(a[i] in it for i in idx):
                return k
    return 0


def all_sequences(alphabet, max_len):
    out = []
    for n in range(max_len + 1):
        out.extend(itertools.product(range(alphabet), repeat=n))
    return out


def lcs_lattice_table(alphabet=3, max_len=8):
    """LCS of every pair of sequences up to ``max_len`` via the subsequence lattice.

    ``contains[s, b]`` says whether ``s`` is a subsequence of ``b`` (greedy
    leftmost matching).  The LCS of ``a`` and ``b`` is then the longest ``s``
    reachable from ``a`` by deletions with ``contains[s, b]``, which we fill
    in by length using ``F[a] = max(|a| * contains[a], max_k F[a minus k])``.
    Returns ``(sequences, F)`` with ``F`` an int8 matrix indexed by sequence.
    """
    seqs = all_sequences(alphabet, max_len)
    index = {s: i for i, s in enumerate(seqs)}
    count = len(seqs)
    width = max_len + 1
    # nxt[b, p, x]: first position >= p holding x in b, or width when absent
    nxt = np.full((count, width + 1, alphabet), width, dtype=np.int8)
    for bi, b in enumerate(seqs):
        for p in range(len(b) - 1, -1, -1):
            nxt[bi, p] = nxt[bi, p + 1]
            nxt[bi, p, b[p]] = p
    rows = np.arange(count)
    end = np.empty((count, count), dtype=np.int8)
    end[0] = -1
    for si in range(1, count):
        s = seqs[si]
        start = end[index[s[:-1]]] + 1
        end[si] = nxt[rows, np.minimum(start, width), s[-1]]
    contains = end < width
    del end
    table = np.zeros((count, count), dtype=np.int8)
    for si in range(1, count):
        s = seqs[si]
        row = np.where(contains[si], np.int8(len(s)), np.int8(0))
        for k in set(s[:i] + s[i + 1:] for i in range(len(s))):
            np.maximum(row, table[index[k]], out=row)
        table[si] = row
    return seqs, table
