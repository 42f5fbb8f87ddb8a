"""Small synthetic paraphrase corpora for smoke tests and overfit checks."""

from __future__ import annotations

import numpy as np

from .data import ParaphrasePair

CONTENT = ["cat", "dog", "bird", "fish", "tree", "car", "book", "lamp", "moon", "rock",
           "river", "house", "apple", "chair", "cloud", "train"]
TEMPLATES = [
    ("what is the {0} ?", "what does {0} mean ?"),
    ("how big is the {0} ?", "what is the size of the {0} ?"),
    ("where is the {0} and the {1} ?", "where are the {0} and the {1} ?"),
    ("is the {0} near the {1} ?", "is the {1} close to the {0} ?"),
    ("why is the {0} red ?", "what makes the {0} red ?"),
    ("can the {0} see the {1} ?", "is the {1} visible to the {0} ?"),
]


def rewrite_corpus(n: int = 64, seed: int = 0) -> list[ParaphrasePair]:
    """Template rewrites: details are copied, the scaffold around them changes."""
    rng = np.random.default_rng(seed)
    seen = set()
    pairs = []
    while len(pairs) < n:
        src_t, tgt_t = TEMPLATES[rng.integers(len(TEMPLATES))]
        words = [str(w) for w in rng.choice(CONTENT, size=2, replace=False)]
        src = src_t.format(*words)
        if src in seen:
            continue
        seen.add(src)
        pairs.append(ParaphrasePair(src, tgt_t.format(*words)))
    return pairs


def copy_corpus(n: int = 64, seed: int = 0, min_len: int = 3, max_len: int = 8) -> list[ParaphrasePair]:
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        words = rng.choice(CONTENT, size=rng.integers(min_len, max_len + 1))
        text = " ".join(str(w) for w in words)
        pairs.append(ParaphrasePair(text, text))
    return pairs
