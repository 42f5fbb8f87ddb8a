import json
import math

import numpy as np
import pytest

from cdnpg import tensor as T
from cdnpg.data import build_vocab
from cdnpg.model import ModelConfig, Transformer
from cdnpg.tensor import Tensor
from cdnpg.toy import copy_corpus
from cdnpg.training import (
    AdamW,
    TrainConfig,
    Trainer,
    adamw_step,
    batch_loss,
    clip_grad_norm,
    cross_entropy_loss,
    lr_schedule,
    train_loop,
)


class TestCrossEntropy:
    @pytest.mark.parametrize("v", [2, 5, 37])
    def test_uniform_logits(self, f64, v):
        loss = cross_entropy_loss(Tensor(np.zeros((4, v))), [4 % v, 1, 1, 1])
        assert loss.item() == pytest.approx(math.log(v), abs=1e-12)

    def test_hand_evaluated(self, f64):
        loss = cross_entropy_loss(Tensor([[math.log(3.0), 0.0]]), [0], pad_id=-1)
        assert loss.item() == pytest.approx(-math.log(0.75), abs=1e-12)

    def test_margin_drives_loss_to_zero(self, f64):
        losses = [cross_entropy_loss(Tensor([[m, 0.0, 0.0]]), [0], pad_id=-1).item() for m in (1, 5, 20, 40)]
        assert all(a > b for a, b in zip(losses, losses[1:]))
        assert losses[-1] < 1e-16

    def test_pad_positions_ignored(self, f64, rng):
        logits = rng.normal(size=(3, 6))
        full = cross_entropy_loss(Tensor(logits[:2]), [4, 5]).item()
        with_pad = cross_entropy_loss(Tensor(logits), [4, 5, 0]).item()
        assert full == pytest.approx(with_pad, abs=1e-12)

    def test_all_pad(self):
        with pytest.raises(ValueError):
            cross_entropy_loss(Tensor(np.zeros((2, 5))), [0, 0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cross_entropy_loss(Tensor(np.zeros((2, 5))), [4, 4, 4])


class TestSchedule:
    @pytest.mark.parametrize("step,expected", [(0, 0.0), (2500, 2.5e-5), (5000, 5e-5), (100_000, 0.0),
                                               (52_500, 2.5e-5), (200_000, 0.0)])
    def test_examples(self, step, expected):
        assert lr_schedule(step, 5000, 5e-5, 100_000) == pytest.approx(expected, abs=1e-18)

    def test_peak_only_at_warmup(self):
        values = [lr_schedule(s, 50, 1e-3, 400) for s in range(401)]
        assert max(values) == 1e-3 and values.index(1e-3) == 50

    def test_piecewise_linear(self):
        values = np.array([lr_schedule(s, 50, 1e-3, 400) for s in range(401)])
        d = np.diff(values)
        assert np.allclose(d[:50], 1e-3 / 50) and np.allclose(d[50:], -1e-3 / 350)

    def test_no_warmup(self):
        assert lr_schedule(0, 0, 1e-3, 10) == 1e-3

    def test_negative_step(self):
        with pytest.raises(ValueError):
            lr_schedule(-1, 10, 1e-3, 100)

    @pytest.mark.parametrize("kw", [dict(peak_lr=0.0), dict(warmup_steps=10, max_steps=5), dict(batch_size=0)])
    def test_config_invariants(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestAdamW:
    def test_decay_only_step(self, f64):
        p = Tensor([2.0, -4.0], requires_grad=True)
        p.grad = np.zeros(2)
        AdamW([p], lr=0.1, weight_decay=0.01).step()
        assert np.allclose(p.data, np.array([2.0, -4.0]) * (1 - 0.001), atol=1e-15)

    def test_first_step_is_lr_sign(self, f64):
        p = Tensor([1.0, 1.0, 1.0], requires_grad=True)
        p.grad = np.array([0.5, -3.0, 1e-3])
        AdamW([p], lr=0.01, weight_decay=0.0).step()
        assert np.allclose(1.0 - p.data, 0.01 * np.sign([0.5, -3.0, 1e-3]), rtol=1e-4)

    def test_no_decay_zero_grad_unchanged(self, f64):
        p = Tensor([1.5, -2.5], requires_grad=True)
        p.grad = np.zeros(2)
        AdamW([p], lr=0.1, weight_decay=0.0).step()
        assert p.data.tolist() == [1.5, -2.5]

    def test_shape_mismatch(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        p.grad = np.zeros(3)
        with pytest.raises(ValueError):
            AdamW([p]).step()

    def test_negative_lr(self):
        p = Tensor([1.0], requires_grad=True)
        with pytest.raises(ValueError):
            AdamW([p]).step(-1.0)

    def test_functional_shim_checks_params(self):
        a, b = Tensor([1.0], requires_grad=True), Tensor([2.0], requires_grad=True)
        with pytest.raises(ValueError):
            adamw_step([b], AdamW([a]), 0.1)

    @pytest.mark.parametrize("x0", [-3.0, -0.2, 0.7, 5.0])
    def test_quadratic_probe_decreases(self, f64, x0):
        x = Tensor([x0], requires_grad=True)
        opt = AdamW([x], weight_decay=0.01)

        def loss():
            return T.sum((x - 1.3) * (x - 1.3))

        before = loss()
        T.backward(before)
        adamw_step([x], opt, 1e-3)
        assert loss().item() < before.item()

    def test_clip_grad_norm(self, f64):
        a = Tensor([0.0, 0.0], requires_grad=True)
        a.grad = np.array([3.0, 4.0])
        assert clip_grad_norm([a], 1.0) == pytest.approx(5.0)
        assert np.allclose(a.grad, [0.6, 0.8])


def toy_setup(n=16, seed=0, **cfg):
    pairs = copy_corpus(n, seed=seed, max_len=5)
    vocab = build_vocab([p.source_tokens for p in pairs])
    model = Transformer(ModelConfig(vocab_size=len(vocab), layers=1, hidden=16, heads=2, max_len=8, dropout=0.1),
                        seed=seed)
    config = TrainConfig(**{"batch_size": 4, "max_steps": 40, "warmup_steps": 5, "peak_lr": 3e-3,
                            "log_interval": 1, **cfg})
    return model, pairs, vocab, config


class TestTrainer:
    def test_identical_batches_identical_gradients(self):
        model, pairs, vocab, config = toy_setup()
        trainer = Trainer(model, pairs, vocab, config)
        batch = trainer.batch_for_step(0)
        grads = []
        for _ in range(2):
            model.zero_grad()
            T.backward(batch_loss(model, batch))
            grads.append({k: p.grad.copy() for k, p in model.named_parameters().items()})
        for k in grads[0]:
            assert np.array_equal(grads[0][k], grads[1][k]), k

    def test_train_step_zeroes_previous_gradients(self):
        model, pairs, vocab, config = toy_setup()
        trainer = Trainer(model, pairs, vocab, config)
        for p in model.parameters():
            p.grad = np.full(p.shape, 1e6, dtype=p.dtype)
        trainer.train_step()
        assert all(np.abs(p.grad).max() < 1e5 for p in model.parameters())

    def test_epoch_covers_every_pair_once(self):
        model, pairs, vocab, config = toy_setup(n=10, batch_size=4)
        trainer = Trainer(model, pairs, vocab, config)
        seen = np.concatenate([trainer.batch_for_step(s).index for s in range(3)])
        assert sorted(seen.tolist()) == list(range(10))

    def test_resume_reproduces_next_step(self, tmp_path):
        model, pairs, vocab, config = toy_setup()
        a = Trainer(model, pairs, vocab, config)
        for _ in range(7):
            a.train_step()
        a.save(tmp_path / "mid.ckpt")
        expected = a.train_step()

        model_b, *_ = toy_setup(seed=0)
        b = Trainer(model_b, pairs, vocab, config)
        b.resume(tmp_path / "mid.ckpt")
        assert b.step == 7
        got = b.train_step()
        assert got[1] == expected[1]
        assert got[0] == pytest.approx(expected[0], rel=1e-6)

    def test_resume_rejects_other_config(self, tmp_path):
        model, pairs, vocab, config = toy_setup()
        Trainer(model, pairs, vocab, config).save(tmp_path / "a.ckpt")
        other = Transformer(ModelConfig(vocab_size=len(vocab), layers=1, hidden=8, heads=2, max_len=8))
        with pytest.raises(ValueError):
            Trainer(other, pairs, vocab, config).resume(tmp_path / "a.ckpt")

    def test_validation_interval_and_outputs(self, tmp_path):
        model, pairs, vocab, config = toy_setup(max_steps=12, validation_interval=4)
        result = train_loop(model, pairs[:12], vocab, config, valid_pairs=pairs[12:], out_dir=tmp_path)
        records = [json.loads(line) for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
        assert [r["step"] for r in records] == list(range(1, 13))
        assert [r["step"] for r in records if r["val_loss"] is not None] == [4, 8, 12]
        assert set(records[0]) == {"step", "train_loss", "val_loss", "lr", "seconds"}
        assert result.best_step in (4, 8, 12)
        assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()
        assert (tmp_path / "vocab.txt").exists()

    def test_patience_stops_early(self):
        model, pairs, vocab, config = toy_setup(max_steps=40, validation_interval=1, patience=1, peak_lr=5.0,
                                                 warmup_steps=0)
        result = Trainer(model, pairs[:12], vocab, config, pairs[12:]).run()
        assert result.stopped_early and result.steps < 40

    def test_empty_dataset(self):
        model, _, vocab, config = toy_setup()
        with pytest.raises(ValueError):
            Trainer(model, [], vocab, config)

    def test_loss_trend_decreases(self):
        pairs = copy_corpus(64, seed=1, max_len=6)
        vocab = build_vocab([p.source_tokens for p in pairs])
        model = Transformer(ModelConfig(vocab_size=len(vocab), layers=1, hidden=32, heads=4, max_len=8,
                                        dropout=0.0), seed=1)
        config = TrainConfig(batch_size=16, max_steps=200, warmup_steps=20, peak_lr=2e-3, log_interval=1)
        losses = [r["train_loss"] for r in Trainer(model, pairs, vocab, config).run().history]
        avg = np.convolve(losses, np.ones(25) / 25, mode="valid")
        checkpoints = avg[::25]
        assert all(a > b for a, b in zip(checkpoints, checkpoints[1:]))
