"""Teacher-forced training with AdamW and a linear warmup/decay schedule."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Batch, ParaphrasePair, Vocabulary, make_batch
from .model import PAD, ModelConfig, Transformer
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_steps: int = 100_000
    warmup_steps: int = 5_000
    peak_lr: float = 5e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    validation_interval: int = 1_000
    patience: int | None = None
    log_interval: int = 100
    grad_clip: float | None = None

    def __post_init__(self):
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be > 0")
        if self.warmup_steps > self.max_steps:
            raise ValueError(f"warmup_steps ({self.warmup_steps}) exceeds max_steps ({self.max_steps})")
        if self.batch_size < 1 or self.max_steps < 1:
            raise ValueError("batch_size and max_steps must be >= 1")


def cross_entropy_loss(logits: Tensor, targets, pad_id: int = PAD) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over non-pad positions."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits {logits.shape} do not match targets {targets.shape}")
    keep = targets != pad_id
    count = int(keep.sum())
    if count == 0:
        raise ValueError("every target position is padding")
    pick = np.zeros(logits.shape, dtype=logits.dtype)
    np.put_along_axis(pick, targets[..., None], 1.0, axis=-1)
    pick *= keep[..., None]
    return T.sum(T.log_softmax(logits, axis=-1) * pick) * (-1.0 / count)


def lr_schedule(step: int, warmup_steps: int, peak_lr: float, max_steps: int) -> float:
    """Linear ramp to ``peak_lr`` at ``warmup_steps``, then linear decay to 0 at ``max_steps``."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if warmup_steps > 0 and step < warmup_steps:
        return peak_lr * step / warmup_steps
    if step >= max_steps:
        return 0.0
    span = max_steps - warmup_steps
    return peak_lr * (max_steps - step) / span if span > 0 else peak_lr


class AdamW:
    """Adam with decoupled weight decay.

    Each step first shrinks ``p -= lr * wd * p`` and then applies the
    bias-corrected Adam update.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        T.zero_grads(self.params)

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        if lr < 0:
            raise ValueError("learning rate must be >= 0")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p.data -= (lr * self.weight_decay) * p.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self, names: Sequence[str]) -> dict[str, np.ndarray]:
        out = {}
        for name, m, v in zip(names, self.m, self.v):
            out[f"optim.m.{name}"] = m
            out[f"optim.v.{name}"] = v
        return out

    def load_state(self, names: Sequence[str], tensors: dict[str, np.ndarray], t: int) -> None:
        for i, name in enumerate(names):
            self.m[i] = tensors[f"optim.m.{name}"].astype(self.params[i].dtype).copy()
            self.v[i] = tensors[f"optim.v.{name}"].astype(self.params[i].dtype).copy()
        self.t = t


def adamw_step(params: Sequence[Tensor], optimizer: AdamW, lr: float) -> None:
    """Functional shim: apply one update of ``optimizer`` to ``params``."""
    if list(params) != optimizer.params:
        raise ValueError("optimizer was built for a different parameter list")
    optimizer.step(lr)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


def batch_loss(model: Transformer, batch: Batch, rng=None) -> Tensor:
    logits = model(batch.src, batch.tgt_in, rng)
    return cross_entropy_loss(logits, batch.tgt_out)


def evaluate_loss(model: Transformer, pairs: Sequence[ParaphrasePair], vocab: Vocabulary,
                  batch_size: int = 64) -> float:
    """Token-weighted mean validation loss with dropout off."""
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    with T.no_grad():
        for lo in range(0, len(pairs), batch_size):
            batch = make_batch(pairs[lo: lo + batch_size], vocab, model.config.max_len)
            n = int((batch.tgt_out != PAD).sum())
            total += batch_loss(model, batch).item() * n
            count += n
    model.train(was_training)
    return total / max(count, 1)


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_val_loss: float | None = None
    best_step: int | None = None
    final_train_loss: float | None = None
    steps: int = 0
    best_checkpoint: Path | None = None
    last_checkpoint: Path | None = None
    stopped_early: bool = False


class Trainer:
    """Owns model, optimizer and the deterministic batch order.

    Batch order for epoch ``e`` comes from ``default_rng([seed, e])`` and the
    dropout stream for step ``s`` from ``default_rng([seed, s, 1])``, so a run
    resumed from a checkpoint replays exactly.
    """

    def __init__(self, model: Transformer, train_pairs: Sequence[ParaphrasePair], vocab: Vocabulary,
                 config: TrainConfig, valid_pairs: Sequence[ParaphrasePair] | None = None,
                 out_dir: str | Path | None = None):
        if not train_pairs:
            raise ValueError("training set is empty")
        self.model = model
        self.train_pairs = list(train_pairs)
        self.valid_pairs = list(valid_pairs or [])
        self.vocab = vocab
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.names = list(model.named_parameters())
        self.optimizer = AdamW(model.parameters(), config.peak_lr, (config.beta1, config.beta2),
                               config.adam_eps, config.weight_decay)
        self.step = 0
        self.best_val = float("inf")
        self.best_step: int | None = None
        self._epoch_cache: tuple[int, np.ndarray] | None = None
        self.on_log: Callable[[dict], None] | None = None
        self.extra_meta: dict = {}

    @property
    def batches_per_epoch(self) -> int:
        return -(-len(self.train_pairs) // self.config.batch_size)

    def batch_for_step(self, step: int) -> Batch:
        epoch, k = divmod(step, self.batches_per_epoch)
        if self._epoch_cache is None or self._epoch_cache[0] != epoch:
            order = np.random.default_rng([self.config.seed, epoch]).permutation(len(self.train_pairs))
            self._epoch_cache = (epoch, order)
        idx = self._epoch_cache[1][k * self.config.batch_size:(k + 1) * self.config.batch_size]
        return make_batch([self.train_pairs[i] for i in idx], self.vocab, self.model.config.max_len, idx)

    def lr(self, step: int) -> float:
        c = self.config
        return lr_schedule(step, c.warmup_steps, c.peak_lr, c.max_steps)

    def train_step(self) -> tuple[float, float]:
        """One optimizer update; returns ``(loss, lr)``."""
        model = self.model
        model.train()
        batch = self.batch_for_step(self.step)
        rng = np.random.default_rng([self.config.seed, self.step, 1])
        self.optimizer.zero_grad()
        loss = batch_loss(model, batch, rng)
        T.backward(loss)
        if self.config.grad_clip:
            clip_grad_norm(model.parameters(), self.config.grad_clip)
        # lr indexed by the number of completed updates + 1 so step 0 is not wasted
        lr = self.lr(self.step + 1)
        self.optimizer.step(lr)
        self.step += 1
        return loss.item(), lr

    # -- persistence -------------------------------------------------------
    def save(self, path: Path, with_optimizer: bool = True) -> Path:
        tensors = dict(self.model.state_dict())
        if with_optimizer:
            tensors.update(self.optimizer.state(self.names))
        meta = {"step": self.step, "train_config": dataclasses.asdict(self.config),
                "best_val_loss": None if self.best_step is None else self.best_val,
                "best_step": self.best_step, "vocab_size": len(self.vocab), **self.extra_meta}
        return save_checkpoint(path, tensors, self.model.config.to_dict(), meta)

    def resume(self, path: str | Path) -> None:
        manifest, tensors = load_checkpoint(path)
        if ModelConfig.from_dict(manifest["config"]) != self.model.config:
            raise ValueError("checkpoint was written for a different model configuration")
        self.model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("optim.")})
        meta = manifest.get("meta", {})
        self.step = int(meta.get("step", 0))
        if any(k.startswith("optim.") for k in tensors):
            self.optimizer.load_state(self.names, tensors, self.step)
        if meta.get("best_val_loss") is not None:
            self.best_val = float(meta["best_val_loss"])
            self.best_step = meta.get("best_step")

    # -- loop ----------------------------------------------------------------
    def run(self, steps: int | None = None, metrics_path: str | Path | None = None) -> TrainResult:
        c = self.config
        end = c.max_steps if steps is None else min(c.max_steps, self.step + steps)
        result = TrainResult()
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            metrics_path = metrics_path or self.out_dir / "metrics.jsonl"
        sink = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
        start = time.perf_counter()
        bad_rounds = 0
        window: list[float] = []
        try:
            while self.step < end:
                loss, lr = self.train_step()
                window.append(loss)
                result.final_train_loss = loss
                record = None
                validate = bool(self.valid_pairs) and c.validation_interval > 0 \
                    and self.step % c.validation_interval == 0
                if validate or self.step % max(c.log_interval, 1) == 0 or self.step == end:
                    record = {"step": self.step, "train_loss": float(np.mean(window)), "val_loss": None,
                              "lr": lr, "seconds": round(time.perf_counter() - start, 4)}
                    window = []
                if validate:
                    val = evaluate_loss(self.model, self.valid_pairs, self.vocab)
                    record["val_loss"] = val
                    if val < self.best_val:
                        self.best_val, self.best_step = val, self.step
                        bad_rounds = 0
                        if self.out_dir is not None:
                            result.best_checkpoint = self.save(self.out_dir / "best.ckpt", with_optimizer=False)
                    else:
                        bad_rounds += 1
                if record is not None:
                    result.history.append(record)
                    if sink:
                        sink.write(json.dumps(record) + "\n")
                        sink.flush()
                    if self.on_log:
                        self.on_log(record)
                    log.info("step %d loss %.4f lr %.2e%s", record["step"], record["train_loss"], lr,
                             "" if record["val_loss"] is None else f" val {record['val_loss']:.4f}")
                if c.patience is not None and bad_rounds >= c.patience:
                    result.stopped_early = True
                    break
        finally:
            if sink:
                sink.close()
        result.steps = self.step
        result.best_val_loss = None if self.best_step is None else self.best_val
        result.best_step = self.best_step
        if self.out_dir is not None:
            result.last_checkpoint = self.save(self.out_dir / "last.ckpt")
            if result.best_checkpoint is None and self.best_step is None:
                # no validation split: the final weights are the best we have
                result.best_checkpoint = self.save(self.out_dir / "best.ckpt", with_optimizer=False)
            elif result.best_checkpoint is None:
                result.best_checkpoint = self.out_dir / "best.ckpt"
        return result


def train_loop(model: Transformer, train_pairs: Sequence[ParaphrasePair], vocab: Vocabulary,
               config: TrainConfig, valid_pairs: Sequence[ParaphrasePair] | None = None,
               out_dir: str | Path | None = None) -> TrainResult:
    trainer = Trainer(model, train_pairs, vocab, config, valid_pairs, out_dir)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        vocab.save(Path(out_dir) / "vocab.txt")
    return trainer.run()
