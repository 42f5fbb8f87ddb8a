"""Granularity-aware multi-head self-attention.

A per-token granularity ``z`` in (0, 1) is read off the incoming hidden
states.  Two masks are built from it:

* resonance ``C[i, j]``: tokens of similar granularity keep their weight;
* scope ``S[i, j]``: tokens with high granularity only look nearby, the
  window shrinking from the full sequence (z=0) to ``epsilon + 1`` (z=1).

The masks multiply the softmaxed attention weights.  Rows are *not*
renormalized unless asked.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

NEG_INF = -1e9


class MaskMode(str, enum.Enum):
    """Which granularity mask multiplies the attention weights."""

    R = "R"
    S = "S"
    R_MUL_S = "R*S"
    R_PLUS_S = "R+S"

    @classmethod
    def parse(cls, value: "MaskMode | str") -> "MaskMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace(" ", "")
        aliases = {"R": cls.R, "S": cls.S, "R*S": cls.R_MUL_S, "R_MUL_S": cls.R_MUL_S,
                   "RS": cls.R_MUL_S, "R⊙S": cls.R_MUL_S, "R+S": cls.R_PLUS_S,
                   "R_PLUS_S": cls.R_PLUS_S}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown mask mode {value!r}; expected one of R, S, R*S, R+S") from None


@dataclass
class GranularityVector:
    """Granularity of each token at one layer."""

    z: np.ndarray
    layer_index: int

    def __len__(self) -> int:
        return int(self.z.shape[-1])


@dataclass
class AttentionMasks:
    resonance: np.ndarray
    scope: np.ndarray
    combined: np.ndarray


@dataclass
class GAAttentionParams:
    """Weights of one granularity-aware attention sublayer.

    Projections act on row vectors: ``Q = H @ w_q``.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    w_g: Tensor | None
    heads: int
    epsilon: int = 2
    b_o: Tensor | None = None

    def __post_init__(self):
        d = self.w_q.shape[0]
        if d % self.heads:
            raise ValueError(f"hidden size {d} is not divisible by {self.heads} heads")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")

    @property
    def hidden(self) -> int:
        return self.w_q.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        out = {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "w_o": self.w_o}
        if self.w_g is not None:
            out["w_g"] = self.w_g
        if self.b_o is not None:
            out["b_o"] = self.b_o
        return out

    @classmethod
    def init(cls, hidden: int, heads: int, rng: np.random.Generator, epsilon: int = 2,
             granularity: bool = True):
        scale = 1.0 / np.sqrt(hidden)

        def w(shape):
            return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)

        return cls(
            w_q=w((hidden, hidden)),
            w_k=w((hidden, hidden)),
            w_v=w((hidden, hidden)),
            w_o=w((hidden, hidden)),
            w_g=w((hidden, 1)) if granularity else None,
            heads=heads,
            epsilon=epsilon,
            b_o=Tensor(np.zeros(hidden), requires_grad=True),
        )


# ---------------------------------------------------------------------------
# granularity head and masks
# ---------------------------------------------------------------------------


def granularity_head(hidden: Tensor, w_g: Tensor) -> Tensor:
    """``sigmoid(H @ w_g)``, one value per position (trailing unit axis dropped)."""
    logits = T.matmul(hidden, w_g)
    return T.sigmoid(T.reshape(logits, logits.shape[:-1]))


def _as_binary(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if not np.all((z == 0.0) | (z == 1.0)):
        raise ValueError("discrete masks need a binary granularity vector (entries 0 or 1)")
    return z


def resonance_mask_discrete(z) -> np.ndarray:
    """1 where two tokens share the same binary granularity, else 0."""
    z = _as_binary(z)
    return (z[..., :, None] == z[..., None, :]).astype(np.float64)


def resonance_mask(z) -> Tensor:
    """Continuous resonance between row token ``i`` and column token ``j``.

    ``(1 - z_i) * max(0, 1 - (z_i + z_j)) + z_i * min(1, 1 - z_i + z_j)``
    """
    z = T._as_tensor(z)
    zi = T.reshape(z, z.shape + (1,))
    zj = T.reshape(z, z.shape[:-1] + (1, z.shape[-1]))
    low = T.maximum(0.0, 1.0 - (zi + zj))
    high = T.minimum(1.0, 1.0 - zi + zj)
    return (1.0 - zi) * low + zi * high


def scope_mask_discrete(z, n: int, epsilon: int = 2) -> np.ndarray:
    """1 where ``|i - j| < (n - epsilon) ** (1 - z_i) + epsilon``, else 0.

    Evaluated exactly as written, including a base ``n - epsilon <= 0``.
    """
    z = _as_binary(z)
    if n < 1:
        raise ValueError(f"sequence length must be >= 1, got {n}")
    idx = np.arange(z.shape[-1])
    dist = np.abs(idx[:, None] - idx[None, :])
    base = float(n - epsilon)
    threshold = np.where(z == 1.0, 1.0, base) + epsilon  # base ** 0 == 1, base ** 1 == base
    return (dist < threshold[..., :, None]).astype(np.float64)


def scope_thresholds(z, lengths, epsilon: int = 2) -> Tensor:
    """Attention radius ``max(1, N - eps) ** (1 - z_i) + eps`` per row."""
    z = T._as_tensor(z)
    n = np.broadcast_to(np.asarray(lengths, dtype=np.float64), z.shape)
    base = np.maximum(1.0, n - epsilon).astype(z.dtype)
    return T.pow_base(base, 1.0 - z) + float(epsilon)


def scope_mask(z, lengths=None, epsilon: int = 2) -> Tensor:
    """Continuous scope ``clip(radius_i - |i - j|, 0, 1)``.

    ``lengths`` gives the N used in row i's radius; it broadcasts against
    ``z`` (scalar, per-sequence ``[B, 1]`` or per-row ``[N]``).  Defaults to
    the sequence length.
    """
    z = T._as_tensor(z)
    n_pos = z.shape[-1]
    if lengths is None:
        lengths = n_pos
    radius = scope_thresholds(z, lengths, epsilon)
    idx = np.arange(n_pos)
    dist = np.abs(idx[:, None] - idx[None, :]).astype(z.dtype)
    raw = T.reshape(radius, radius.shape + (1,)) - dist
    return T.maximum(0.0, T.minimum(1.0, raw))


def combine_masks(resonance, scope, mode: MaskMode | str):
    """Merge the two masks according to ``mode``; works on arrays or tensors."""
    mode = MaskMode.parse(mode)
    if tuple(resonance.shape) != tuple(scope.shape):
        raise ValueError(f"mask shapes differ: {tuple(resonance.shape)} vs {tuple(scope.shape)}")
    if mode is MaskMode.R:
        return resonance
    if mode is MaskMode.S:
        return scope
    if mode is MaskMode.R_MUL_S:
        return resonance * scope
    return (resonance + scope) * 0.5


def build_mask(z: Tensor, mode: MaskMode, lengths=None, epsilon: int = 2) -> Tensor:
    """Only builds the mask(s) the mode actually needs."""
    mode = MaskMode.parse(mode)
    if mode is MaskMode.R:
        return resonance_mask(z)
    if mode is MaskMode.S:
        return scope_mask(z, lengths, epsilon)
    return combine_masks(resonance_mask(z), scope_mask(z, lengths, epsilon), mode)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def causal_bias(n: int, dtype=np.float32) -> np.ndarray:
    """Additive mask: 0 on and below the diagonal, -1e9 above."""
    return np.triu(np.full((n, n), NEG_INF, dtype=dtype), k=1)


def padding_bias(key_padding: np.ndarray, dtype=np.float32) -> np.ndarray:
    """``[B, N]`` bool (True = pad) to an additive ``[B, 1, 1, N]`` mask."""
    return np.where(key_padding, NEG_INF, 0.0).astype(dtype)[:, None, None, :]


def split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return T.transpose(T.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def attention_weights(q: Tensor, k: Tensor, bias: np.ndarray | None) -> Tensor:
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(q.shape[-1]))
    if bias is not None:
        scores = scores + bias.astype(scores.dtype)
    return T.softmax(scores, axis=-1)


def ga_self_attention(
    hidden: Tensor,
    params: GAAttentionParams,
    mode: MaskMode | str | None = MaskMode.R,
    causal: bool = False,
    *,
    key_padding: np.ndarray | None = None,
    lengths=None,
    renormalize: bool = False,
    identity_mask: bool = False,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    return_weights: bool = False,
):
    """Multi-head self-attention with granularity masks applied after softmax.

    Parameters
    ----------
    hidden : Tensor
        ``[N, d]`` or ``[B, N, d]`` incoming hidden states.
    mode : MaskMode or None
        ``None`` runs plain scaled dot-product attention (no granularity head).
    causal : bool
        Add the -1e9 causal mask inside the softmax.
    key_padding : ndarray, optional
        ``[B, N]`` bool, True at pad positions; pads get -1e9 inside softmax.
    lengths : array-like, optional
        N used by the scope radius (see :func:`scope_mask`).  Defaults to the
        number of non-pad tokens per sequence.
    identity_mask : bool
        Compute ``z`` but replace the combined mask by ones.

    Returns
    -------
    output : Tensor
        Same shape as ``hidden``.
    z : Tensor or None
        Granularity per position, ``[N]`` or ``[B, N]``.
    diagnostics : dict
        ``attention`` (A), ``adjusted`` (A * M) and ``mask`` arrays when
        ``return_weights`` is set.
    """
    if hidden.shape[-2] == 0:
        raise ValueError("ga_self_attention needs a non-empty sequence")
    squeeze = hidden.ndim == 2
    if squeeze:
        hidden = T.reshape(hidden, (1,) + hidden.shape)
        if key_padding is not None:
            key_padding = np.asarray(key_padding)[None]
    b, n, d = hidden.shape
    if d != params.hidden:
        raise ValueError(f"hidden size {d} does not match attention parameters ({params.hidden})")

    bias = None
    if causal:
        bias = causal_bias(n)[None, None]
    if key_padding is not None:
        pb = padding_bias(np.asarray(key_padding, dtype=bool))
        bias = pb if bias is None else bias + pb

    q = split_heads(T.matmul(hidden, params.w_q), params.heads)
    k = split_heads(T.matmul(hidden, params.w_k), params.heads)
    v = split_heads(T.matmul(hidden, params.w_v), params.heads)
    weights = attention_weights(q, k, bias)

    z = None
    mask = None
    adjusted = weights
    if mode is not None:
        if params.w_g is None:
            raise ValueError("granularity-aware attention needs a granularity projection w_g")
        z = granularity_head(hidden, params.w_g)
        if identity_mask:
            mask = T.ones((b, n, n))
        else:
            if lengths is None:
                if key_padding is not None:
                    lengths = (~np.asarray(key_padding, dtype=bool)).sum(axis=-1, keepdims=True)
                else:
                    lengths = n
            mask = build_mask(z, mode, lengths, params.epsilon)
        adjusted = weights * T.reshape(mask, (b, 1, n, n))
        if renormalize:
            adjusted = adjusted / (T.sum(adjusted, axis=-1, keepdims=True) + 1e-9)

    attended = T.dropout(adjusted, dropout, rng)
    out = T.matmul(merge_heads(T.matmul(attended, v)), params.w_o)
    if params.b_o is not None:
        out = out + params.b_o

    diagnostics = {}
    if return_weights:
        diagnostics = {
            "attention": weights.data,
            "adjusted": adjusted.data,
            "mask": None if mask is None else mask.data,
        }
    if squeeze:
        out = T.reshape(out, (n, d))
        if z is not None:
            z = T.reshape(z, (n,))
        diagnostics = {k_: (v_[0] if v_ is not None else None) for k_, v_ in diagnostics.items()}
    return out, z, diagnostics


def masks_for(z, mode: MaskMode | str, n: int | None = None, epsilon: int = 2) -> AttentionMasks:
    """Plain-array resonance, scope and combined masks for inspection."""
    with T.no_grad():
        zt = Tensor(np.asarray(z, dtype=np.float64), dtype=np.float64)
        c = resonance_mask(zt).data
        s = scope_mask(zt, n, epsilon).data
    return AttentionMasks(resonance=c, scope=s, combined=np.asarray(combine_masks(c, s, mode)))


def cross_attention(
    query: Tensor,
    memory: Tensor,
    params: GAAttentionParams,
    *,
    key_padding: np.ndarray | None = None,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Plain multi-head attention of ``query [B, M, d]`` over ``memory [B, N, d]``."""
    q = split_heads(T.matmul(query, params.w_q), params.heads)
    k = split_heads(T.matmul(memory, params.w_k), params.heads)
    v = split_heads(T.matmul(memory, params.w_v), params.heads)
    bias = None if key_padding is None else padding_bias(np.asarray(key_padding, dtype=bool))
    weights = T.dropout(attention_weights(q, k, bias), dropout, rng)
    out = T.matmul(merge_heads(T.matmul(weights, v)), params.w_o)
    if params.b_o is not None:
        out = out + params.b_o
    return out
