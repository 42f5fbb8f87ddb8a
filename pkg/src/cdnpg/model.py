"""Encoder-decoder transformer whose self-attention sublayers are granularity-aware.

Each layer is post-LN::

    H_bar = LN(GASelfAttn(H) + H)
    H     = LN(FFN(H_bar) + H_bar)

with a vanilla cross-attention sublayer between the two in the decoder.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import (
    GAAttentionParams,
    GranularityVector,
    MaskMode,
    cross_attention,
    ga_self_attention,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .tensor import Tensor

PAD, BOS, EOS, UNK = 0, 1, 2, 3


@dataclass
class ModelConfig:
    vocab_size: int
    layers: int = 3
    hidden: int = 450
    heads: int = 9
    ffn_dim: int | None = None
    max_len: int = 20
    dropout: float = 0.1
    mask_mode: MaskMode | None = MaskMode.R
    epsilon: int = 2
    renormalize: bool = False
    identity_mask: bool = False

    def __post_init__(self):
        if self.mask_mode is not None:
            self.mask_mode = MaskMode.parse(self.mask_mode)
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.hidden
        if self.hidden % self.heads:
            raise ValueError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the 4 reserved ids plus at least one token")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @property
    def vanilla(self) -> bool:
        return self.mask_mode is None

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["mask_mode"] = None if self.mask_mode is None else self.mask_mode.value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EncoderOutput:
    hidden: Tensor
    per_layer_z: list[GranularityVector] = field(default_factory=list)
    padding: np.ndarray | None = None
    z_tensors: list[Tensor] = field(default_factory=list)
    attention: list[dict] = field(default_factory=list)


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class _LayerNorm:
    def __init__(self, d):
        self.g = Tensor(np.ones(d), requires_grad=True)
        self.b = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x):
        return T.layer_norm(x, self.g, self.b, 1e-5)


class _FFN:
    def __init__(self, d, inner, rng):
        s1, s2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(inner)
        self.w1 = Tensor(rng.uniform(-s1, s1, (d, inner)), requires_grad=True)
        self.b1 = Tensor(np.zeros(inner), requires_grad=True)
        self.w2 = Tensor(rng.uniform(-s2, s2, (inner, d)), requires_grad=True)
        self.b2 = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x, p, rng):
        h = T.dropout(T.relu(T.matmul(x, self.w1) + self.b1), p, rng)
        return T.matmul(h, self.w2) + self.b2


class _EncoderLayer:
    def __init__(self, cfg: ModelConfig, rng):
        self.attn = GAAttentionParams.init(cfg.hidden, cfg.heads, rng, cfg.epsilon, not cfg.vanilla)
        self.ln1 = _LayerNorm(cfg.hidden)
        self.ffn = _FFN(cfg.hidden, cfg.ffn_dim, rng)
        self.ln2 = _LayerNorm(cfg.hidden)


class _DecoderLayer(_EncoderLayer):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__(cfg, rng)
        self.cross = GAAttentionParams.init(cfg.hidden, cfg.heads, rng, cfg.epsilon, granularity=False)
        self.ln_cross = _LayerNorm(cfg.hidden)


def _layer_tensors(prefix: str, layer) -> dict[str, Tensor]:
    out = {}
    for k, v in layer.attn.tensors().items():
        out[f"{prefix}.attn.{k}"] = v
    out[f"{prefix}.ln1.g"], out[f"{prefix}.ln1.b"] = layer.ln1.g, layer.ln1.b
    if isinstance(layer, _DecoderLayer):
        for k, v in layer.cross.tensors().items():
            out[f"{prefix}.cross.{k}"] = v
        out[f"{prefix}.ln_cross.g"], out[f"{prefix}.ln_cross.b"] = layer.ln_cross.g, layer.ln_cross.b
    f = layer.ffn
    out.update({f"{prefix}.ffn.w1": f.w1, f"{prefix}.ffn.b1": f.b1, f"{prefix}.ffn.w2": f.w2, f"{prefix}.ffn.b2": f.b2})
    out[f"{prefix}.ln2.g"], out[f"{prefix}.ln2.b"] = layer.ln2.g, layer.ln2.b
    return out


class Transformer:
    """Encoder-decoder transformer with granularity-aware self-attention in both stacks.

    With ``config.mask_mode = None`` the same class is a vanilla transformer
    (no granularity head), which serves as the timing and equivalence baseline.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.hidden
        self.embed = Tensor(rng.normal(0.0, d**-0.5, (config.vocab_size, d)), requires_grad=True)
        self.encoder = [_EncoderLayer(config, rng) for _ in range(config.layers)]
        self.decoder = [_DecoderLayer(config, rng) for _ in range(config.layers)]
        s = 1.0 / np.sqrt(d)
        self.out_w = Tensor(rng.uniform(-s, s, (d, config.vocab_size)), requires_grad=True)
        self.out_b = Tensor(np.zeros(config.vocab_size), requires_grad=True)
        self.training = False
        self._positions = sinusoidal_positions(max(config.max_len, 1) + 1, d)

    # -- parameters ------------------------------------------------------
    def named_parameters(self) -> dict[str, Tensor]:
        out = {"embed": self.embed}
        for i, layer in enumerate(self.encoder):
            out.update(_layer_tensors(f"enc.{i}", layer))
        for i, layer in enumerate(self.decoder):
            out.update(_layer_tensors(f"dec.{i}", layer))
        out["out.w"], out["out.b"] = self.out_w, self.out_b
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        T.zero_grads(self.parameters())

    def train(self, mode: bool = True) -> "Transformer":
        self.training = mode
        return self

    def eval(self) -> "Transformer":
        return self.train(False)

    def astype(self, dtype) -> "Transformer":
        """Cast every parameter in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    # -- forward ---------------------------------------------------------
    def _positional(self, n: int, dtype) -> np.ndarray:
        if n > self._positions.shape[0]:
            self._positions = sinusoidal_positions(n, self.config.hidden)
        return self._positions[:n].astype(dtype)

    def embed_tokens(self, ids: np.ndarray) -> Tensor:
        """Token embedding scaled by sqrt(d) plus sinusoidal positions."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise IndexError(f"token id out of range for vocab_size={self.config.vocab_size}")
        x = T.embedding(self.embed, ids) * float(np.sqrt(self.config.hidden))
        return x + self._positional(ids.shape[-1], x.dtype)

    def _dropout(self):
        return self.config.dropout if self.training else 0.0

    def encode(self, src_ids, rng: np.random.Generator | None = None, return_weights: bool = False) -> EncoderOutput:
        """Run the encoder on ``[N]`` or ``[B, N]`` ids (PAD-aware)."""
        src = np.asarray(src_ids, dtype=np.int64)
        single = src.ndim == 1
        if single:
            src = src[None]
        if src.shape[-1] == 0:
            raise ValueError("encoder input is empty")
        cfg = self.config
        padding = src == PAD
        lengths = (~padding).sum(axis=-1, keepdims=True)
        p = self._dropout()
        rng = rng if p > 0 else None
        h = self.embed_tokens(src)
        zs, z_tensors, diags = [], [], []
        for idx, layer in enumerate(self.encoder):
            attn, z, diag = ga_self_attention(
                h, layer.attn, cfg.mask_mode, causal=False, key_padding=padding, lengths=lengths,
                renormalize=cfg.renormalize, identity_mask=cfg.identity_mask, dropout=p, rng=rng,
                return_weights=return_weights,
            )
            h = layer.ln1(attn + h)
            h = layer.ln2(layer.ffn(h, p, rng) + h)
            if z is not None:
                z_tensors.append(z)
                zs.append(GranularityVector(z.data[0] if single else z.data, idx))
            if return_weights:
                diags.append(diag)
        if single:
            h = T.reshape(h, h.shape[1:])
        return EncoderOutput(hidden=h, per_layer_z=zs, padding=padding, z_tensors=z_tensors, attention=diags)

    def decode(self, tgt_ids, memory: EncoderOutput, rng: np.random.Generator | None = None) -> Tensor:
        """Logits ``[M, V]`` (or ``[B, M, V]``) for every position of the prefix."""
        tgt = np.asarray(tgt_ids, dtype=np.int64)
        single = tgt.ndim == 1
        if single:
            tgt = tgt[None]
        if tgt.shape[-1] == 0:
            raise ValueError("decoder prefix is empty (it must start with BOS)")
        cfg = self.config
        mem = memory.hidden
        if mem.ndim == 2:
            mem = T.reshape(mem, (1,) + mem.shape)
        mem_pad = memory.padding
        if mem.shape[0] != tgt.shape[0]:
            if mem.shape[0] != 1:
                raise ValueError(f"batch mismatch: memory {mem.shape[0]} vs target {tgt.shape[0]}")
            mem = mem + np.zeros((tgt.shape[0], 1, 1), dtype=mem.dtype)
            if mem_pad is not None:
                mem_pad = np.broadcast_to(mem_pad, (tgt.shape[0], mem_pad.shape[-1]))
        m = tgt.shape[-1]
        # row i has seen a prefix of i + 1 tokens
        row_lengths = np.arange(1, m + 1)
        p = self._dropout()
        rng = rng if p > 0 else None
        h = self.embed_tokens(tgt)
        for layer in self.decoder:
            attn, _, _ = ga_self_attention(
                h, layer.attn, cfg.mask_mode, causal=True, lengths=row_lengths,
                renormalize=cfg.renormalize, identity_mask=cfg.identity_mask, dropout=p, rng=rng,
            )
            h = layer.ln1(attn + h)
            h = layer.ln_cross(cross_attention(h, mem, layer.cross, key_padding=mem_pad, dropout=p, rng=rng) + h)
            h = layer.ln2(layer.ffn(h, p, rng) + h)
        logits = T.matmul(h, self.out_w) + self.out_b
        if single:
            logits = T.reshape(logits, logits.shape[1:])
        return logits

    def decoder_z(self, tgt_ids, memory: EncoderOutput) -> list[np.ndarray]:
        """Per-layer decoder granularity for a single prefix (inspection only)."""
        tgt = np.asarray(tgt_ids, dtype=np.int64)[None]
        cfg = self.config
        mem = memory.hidden if memory.hidden.ndim == 3 else T.reshape(memory.hidden, (1,) + memory.hidden.shape)
        out = []
        with T.no_grad():
            h = self.embed_tokens(tgt)
            for layer in self.decoder:
                attn, z, _ = ga_self_attention(h, layer.attn, cfg.mask_mode, causal=True,
                                               lengths=np.arange(1, tgt.shape[-1] + 1),
                                               renormalize=cfg.renormalize, identity_mask=cfg.identity_mask)
                if z is not None:
                    out.append(z.data[0])
                h = layer.ln1(attn + h)
                h = layer.ln_cross(cross_attention(h, mem, layer.cross, key_padding=memory.padding) + h)
                h = layer.ln2(layer.ffn(h, 0.0, None) + h)
        return out

    def forward(self, src_ids, tgt_in, rng=None) -> Tensor:
        return self.decode(tgt_in, self.encode(src_ids, rng), rng)

    __call__ = forward

    # -- persistence -----------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise CheckpointError(
                f"checkpoint does not match model config: missing={sorted(missing)[:5]} "
                f"unexpected={sorted(unexpected)[:5]}"
            )
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise CheckpointError(f"shape mismatch for {name}: checkpoint {arr.shape}, model {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def save(self, path, meta: dict | None = None) -> Path:
        return save_checkpoint(path, self.state_dict(), self.config.to_dict(), meta)

    @classmethod
    def load(cls, path) -> tuple["Transformer", dict]:
        manifest, tensors = load_checkpoint(path)
        config = ModelConfig.from_dict(manifest["config"])
        model = cls(config)
        model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("optim.")})
        return model, manifest
