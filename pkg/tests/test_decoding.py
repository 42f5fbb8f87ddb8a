import itertools
import math

import numpy as np
import pytest

from cdnpg.decoding import (
    Hypothesis,
    beam_search,
    beam_search_fn,
    enumerate_sequences,
    greedy_decode,
    greedy_search,
    normalized_score,
)
from cdnpg.model import EOS, ModelConfig, Transformer


def table_lm(table):
    """Step function of a bigram LM: row = previous token (row 0 also serves the empty prefix via -1)."""
    logt = {k: np.log(np.asarray(v, dtype=np.float64)) for k, v in table.items()}

    def step(prefixes):
        return np.stack([logt[int(p[-1]) if len(p) else -1] for p in prefixes])

    return step


def random_lm(v, seed):
    """Context-dependent LM: next-token distribution hashed from the whole prefix."""
    rng = np.random.default_rng(seed)
    cache = {}

    def step(prefixes):
        rows = []
        for p in prefixes:
            key = tuple(int(t) for t in p)
            if key not in cache:
                logits = rng.normal(scale=2.0, size=v)
                cache[key] = logits - np.log(np.exp(logits).sum())
            rows.append(cache[key])
        return np.stack(rows)

    return step


def brute_force_best(step, v, max_len, eos, alpha):
    """Independent oracle: score every sequence built with itertools.product."""
    best = None
    for length in range(1, max_len + 1):
        for seq in itertools.product(range(v), repeat=length):
            if eos in seq[:-1]:
                continue
            if length < max_len and seq[-1] != eos:
                continue
            lp = sum(step(np.asarray([seq[:t]], dtype=np.int64).reshape(1, t))[0][seq[t]] for t in range(length))
            key = (-lp / length**alpha, seq)
            if best is None or key < best:
                best = key
    return best[1], -best[0]


# a : 0, b : 1, EOS : 2.  Greedy takes "a" first; the best complete sequence starts with "b".
TOY = {-1: [0.5, 0.4, 0.1], 0: [0.35, 0.35, 0.3], 1: [0.05, 0.05, 0.9], 2: [1 / 3, 1 / 3, 1 / 3]}


class TestToyLanguageModel:
    def test_greedy_is_myopic(self):
        assert greedy_search(table_lm(TOY), 2, eos_id=2) == [0, 0]

    def test_beam_v_finds_true_argmax(self):
        best = beam_search_fn(table_lm(TOY), 3, 2, eos_id=2)[0]
        assert best.token_ids == (1, 2)
        assert best.score == pytest.approx((math.log(0.4) + math.log(0.9)) / 2, abs=1e-12)

    def test_enumeration_agrees(self):
        step = table_lm(TOY)
        ranked = enumerate_sequences(step, 3, 2, eos_id=2)
        assert ranked[0].token_ids == brute_force_best(step, 3, 2, 2, 1.0)[0] == (1, 2)
        assert len(ranked) == 1 + 2 * 3

    def test_hand_evaluated_scores(self):
        ranked = {h.token_ids: h.score for h in enumerate_sequences(table_lm(TOY), 3, 2, eos_id=2)}
        assert ranked[(2,)] == pytest.approx(math.log(0.1))
        assert ranked[(0, 2)] == pytest.approx((math.log(0.5) + math.log(0.3)) / 2)


class TestExhaustiveOracle:
    @pytest.mark.parametrize("v,max_len,seed", [(v, m, s) for v in (3, 4, 5) for m in (2, 3, 4) for s in range(3)])
    def test_wide_beam_recovers_argmax(self, v, max_len, seed):
        step = random_lm(v, seed)
        seq, score = brute_force_best(step, v, max_len, EOS, 1.0)
        best = beam_search_fn(step, v**max_len, max_len, EOS)[0]
        assert best.token_ids == seq
        assert best.score == pytest.approx(score, abs=1e-12)
        assert enumerate_sequences(step, v, max_len, EOS)[0].token_ids == seq
        # the narrower V * max_len width is not exact in general but holds on these draws
        assert beam_search_fn(step, v * max_len, max_len, EOS)[0].token_ids == seq

    @pytest.mark.parametrize("alpha", [0.0, 0.6, 1.0])
    def test_alpha_respected(self, alpha):
        step = random_lm(4, 9)
        seq, _ = brute_force_best(step, 4, 3, EOS, alpha)
        assert beam_search_fn(step, 64, 3, EOS, alpha)[0].token_ids == seq


class TestBeamProperties:
    def test_ranked_and_bounded(self):
        step = random_lm(5, 3)
        ranked = beam_search_fn(step, 4, 6, EOS)
        scores = [h.score for h in ranked]
        assert scores == sorted(scores, reverse=True)
        assert all(1 <= len(h) <= 6 for h in ranked)
        assert all(h.finished for h in ranked)
        assert all(h.token_ids[-1] == EOS or len(h) == 6 for h in ranked)
        assert all(EOS not in h.token_ids[:-1] for h in ranked)

    def test_scores_are_normalized_log_probs(self):
        for h in beam_search_fn(random_lm(5, 4), 3, 5, EOS, alpha=0.7):
            assert h.score == pytest.approx(normalized_score(h.log_prob, len(h), 0.7))
            assert h.log_prob <= 0

    def test_log_prob_monotone_along_prefixes(self):
        step = random_lm(5, 5)
        h = beam_search_fn(step, 3, 5, EOS)[0]
        lp, partial = 0.0, []
        for t, tok in enumerate(h.token_ids):
            nxt = lp + step(np.asarray([h.token_ids[:t]], dtype=np.int64).reshape(1, t))[0][tok]
            assert nxt <= lp
            lp = nxt
        assert lp == pytest.approx(h.log_prob)

    def test_never_exceeds_max_len_without_eos(self):
        never_eos = {-1: [0.5, 0.5, 0.0], 0: [0.5, 0.5, 0.0], 1: [0.5, 0.5, 0.0]}
        with np.errstate(divide="ignore"):
            out = beam_search_fn(table_lm(never_eos), 2, 4, eos_id=2)
        assert all(len(h) == 4 for h in out)
        with np.errstate(divide="ignore"):
            assert greedy_search(table_lm(never_eos), 4, eos_id=2) == [0, 0, 0, 0]

    def test_tie_break_is_lexicographic(self):
        flat = {k: [0.25, 0.25, 0.25, 0.25] for k in (-1, 0, 1, 2, 3)}
        out = beam_search_fn(table_lm(flat), 2, 2, eos_id=2)
        assert out[0].token_ids == (0, 0)

    def test_beam_size_validation(self):
        with pytest.raises(ValueError):
            beam_search_fn(random_lm(3, 0), 0, 3, EOS)

    def test_hypothesis_len(self):
        assert len(Hypothesis((4, 5, 2), -1.0)) == 3


@pytest.fixture(scope="module")
def model():
    return Transformer(ModelConfig(vocab_size=12, layers=2, hidden=16, heads=2, max_len=7, dropout=0.0,
                                   mask_mode="R*S"), seed=21)


class TestModelDecoding:
    def test_beam_one_equals_greedy_on_50_inputs(self, model):
        rng = np.random.default_rng(5)
        for _ in range(50):
            src = rng.integers(4, 12, rng.integers(1, 8)).tolist()
            assert list(beam_search(model, src, beam_size=1)[0].token_ids) == greedy_decode(model, src)

    def test_max_len_respected(self, model):
        assert len(greedy_decode(model, [4, 5, 6], max_len=3)) <= 3
        assert all(len(h) <= 3 for h in beam_search(model, [4, 5, 6], 4, max_len=3))

    def test_restores_training_flag(self, model):
        model.train()
        greedy_decode(model, [4, 5])
        assert model.training
        model.eval()

    def test_empty_source(self, model):
        with pytest.raises(ValueError):
            greedy_decode(model, [])
        with pytest.raises(ValueError):
            beam_search(model, [], 2)

    def test_model_wide_beam_matches_enumeration(self):
        tiny = Transformer(ModelConfig(vocab_size=5, layers=1, hidden=8, heads=2, max_len=4, dropout=0.0), seed=3)
        from cdnpg.decoding import model_step_fn

        step = model_step_fn(tiny, [4, 3, 4])
        seq, _ = brute_force_best(step, 5, 3, EOS, 1.0)
        assert beam_search(tiny, [4, 3, 4], beam_size=5**3, max_len=3)[0].token_ids == seq
