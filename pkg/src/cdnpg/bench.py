"""Step-time comparison of the GA-attention model against a baseline."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import ModelConfig, Transformer
from .training import cross_entropy_loss


@dataclass
class BenchConfig:
    hidden: int = 450
    layers: int = 3
    heads: int = 9
    seq_len: int = 20
    batch_size: int = 32
    vocab_size: int = 1000
    repeats: int = 5
    mask_mode: str = "R*S"
    baseline: str = "vanilla"  # or "identity": same GA model with masks forced to 1
    seed: int = 0


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def run_bench(cfg: BenchConfig) -> dict:
    """Median wall-clock of forward and forward+backward for both models.

    Runs alternate between the two models so slow drift of the machine hits
    both equally.
    """
    if cfg.baseline not in ("vanilla", "identity"):
        raise ValueError("baseline must be 'vanilla' or 'identity'")
    common = dict(vocab_size=cfg.vocab_size, layers=cfg.layers, hidden=cfg.hidden, heads=cfg.heads,
                  max_len=cfg.seq_len, dropout=0.0)
    ga = Transformer(ModelConfig(mask_mode=cfg.mask_mode, **common), seed=cfg.seed)
    if cfg.baseline == "vanilla":
        base = Transformer(ModelConfig(mask_mode=None, **common), seed=cfg.seed)
        state = ga.state_dict()
        base.load_state_dict({k: v for k, v in state.items() if k in base.named_parameters()})
    else:
        base = Transformer(ModelConfig(mask_mode=cfg.mask_mode, identity_mask=True, **common), seed=cfg.seed)

    rng = np.random.default_rng(cfg.seed)
    src = rng.integers(4, cfg.vocab_size, (cfg.batch_size, cfg.seq_len))
    tgt_in = rng.integers(4, cfg.vocab_size, (cfg.batch_size, cfg.seq_len))
    tgt_out = rng.integers(4, cfg.vocab_size, (cfg.batch_size, cfg.seq_len))

    def forward(model):
        def run():
            with T.no_grad():
                model(src, tgt_in)
        return run

    def step(model):
        def run():
            model.zero_grad()
            T.backward(cross_entropy_loss(model(src, tgt_in), tgt_out))
        return run

    times = {"fwd_ga": [], "fwd_base": [], "step_ga": [], "step_base": []}
    # warm-up: first call pays allocation costs
    step(ga)()
    step(base)()
    for _ in range(cfg.repeats):
        times["fwd_base"].append(_timed(forward(base)))
        times["fwd_ga"].append(_timed(forward(ga)))
        times["step_base"].append(_timed(step(base)))
        times["step_ga"].append(_timed(step(ga)))
    med = {k: statistics.median(v) for k, v in times.items()}

    def spread(v):
        return (max(v) - min(v)) / statistics.median(v)

    return {
        "hidden": cfg.hidden, "layers": cfg.layers, "heads": cfg.heads, "seq_len": cfg.seq_len,
        "batch_size": cfg.batch_size, "vocab_size": cfg.vocab_size, "repeats": cfg.repeats,
        "mask_mode": cfg.mask_mode, "baseline": cfg.baseline,
        "forward_ga_s": med["fwd_ga"], "forward_baseline_s": med["fwd_base"],
        "step_ga_s": med["step_ga"], "step_baseline_s": med["step_base"],
        "forward_ratio": round(med["fwd_ga"] / med["fwd_base"], 2),
        "step_ratio": round(med["step_ga"] / med["step_base"], 2),
        "max_spread": max(spread(v) for v in times.values()),
    }
