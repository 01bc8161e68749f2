"""Neural building blocks: LSTM cell, additive attention, dropout masks, dense.

All layer functions are batched: vectors from the written contracts appear
here as rows of (batch, dim) arrays. Weight matrices are stored (in, out) so
that ``x @ w`` applies them.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from . import autodiff as ad

# Large negative logit used to exclude padded positions from attention.
# Finite on purpose: exp(x - max) underflows to exactly 0 for these scores.
NEG_INF_SCORE = 1e9


@dataclass
class LstmParams:
    """Packed LSTM weights; gate order along the last axis is i, f, g, o
    (input, forget, cell candidate, output)."""

    wx: ad.Tensor  # (input_size, 4*hidden)
    wh: ad.Tensor  # (hidden, 4*hidden)
    b: ad.Tensor  # (4*hidden,)

    @property
    def hidden_size(self) -> int:
        return self.wh.shape[0]

    @property
    def input_size(self) -> int:
        return self.wx.shape[0]


@dataclass
class AttentionParams:
    """Additive attention: score_i = v . tanh(w_dec s + w_enc h_i)."""

    w_dec: ad.Tensor  # (hidden, attn)
    w_enc: ad.Tensor  # (hidden, attn)
    v: ad.Tensor  # (attn,)


@dataclass(frozen=True)
class DropoutMasks:
    """Per-sequence inverted-dropout masks, one array per site.

    Each mask is sampled once per sequence and reused at every timestep
    (variational dropout). ``None`` means no dropout at that site, which is
    how inference runs.
    """

    enc_in: np.ndarray | None = None
    enc_h: np.ndarray | None = None
    dec_in: np.ndarray | None = None
    dec_h: np.ndarray | None = None
    out_in: np.ndarray | None = None


IDENTITY_MASKS = DropoutMasks()

_MASK_SITES = tuple(f.name for f in fields(DropoutMasks))


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.1, dtype=np.float32) -> ad.Tensor:
    return ad.Tensor(rng.uniform(-scale, scale, size=shape).astype(dtype))


def init_lstm(
    rng: np.random.Generator, input_size: int, hidden_size: int, dtype=np.float32
) -> LstmParams:
    """Uniform [-0.1, 0.1] weights; forget-gate bias 1.0, other biases 0."""
    wx = uniform_init(rng, (input_size, 4 * hidden_size), dtype=dtype)
    wh = uniform_init(rng, (hidden_size, 4 * hidden_size), dtype=dtype)
    b = np.zeros(4 * hidden_size, dtype=dtype)
    b[hidden_size : 2 * hidden_size] = 1.0
    return LstmParams(wx=wx, wh=wh, b=ad.Tensor(b))


def init_attention(rng: np.random.Generator, hidden_size: int, dtype=np.float32) -> AttentionParams:
    return AttentionParams(
        w_dec=uniform_init(rng, (hidden_size, hidden_size), dtype=dtype),
        w_enc=uniform_init(rng, (hidden_size, hidden_size), dtype=dtype),
        v=uniform_init(rng, (hidden_size,), dtype=dtype),
    )


def lstm_step(x, h_prev, c_prev, params: LstmParams, in_mask=None, h_mask=None):
    """One LSTM update on a batch: returns (h, c), each (batch, hidden).

    Dropout masks (when given) multiply the input and the previous hidden
    state; callers pass the same arrays at every timestep of a sequence.
    """
    hs = params.hidden_size
    if in_mask is not None:
        x = ad.mul(x, in_mask)
    if h_mask is not None:
        h_prev = ad.mul(h_prev, h_mask)
    z = ad.add(ad.add(ad.matmul(x, params.wx), ad.matmul(h_prev, params.wh)), params.b)
    i = ad.sigmoid(ad.slice_last(z, 0, hs))
    f = ad.sigmoid(ad.slice_last(z, hs, 2 * hs))
    g = ad.tanh(ad.slice_last(z, 2 * hs, 3 * hs))
    o = ad.sigmoid(ad.slice_last(z, 3 * hs, 4 * hs))
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h = ad.mul(o, ad.tanh(c))
    return h, c


def attend(s_prev, h_enc, params: AttentionParams, enc_proj=None, mask: np.ndarray | None = None):
    """Additive attention over encoder states.

    s_prev: (batch, hidden) previous decoder state.
    h_enc: (batch, n, hidden) encoder states.
    enc_proj: optional precomputed ``h_enc @ w_enc`` (it is constant across
        decoder steps, so callers compute it once).
    mask: optional (batch, n) array, 1 for real positions and 0 for padding.

    Returns (context, alphas) with shapes (batch, hidden) and (batch, n).
    """
    b, n = h_enc.shape[0], h_enc.shape[1]
    if n < 1:
        raise ValueError("attend: empty encoder sequence")
    hidden = h_enc.shape[2]
    if enc_proj is None:
        flat = ad.reshape(h_enc, (b * n, hidden))
        enc_proj = ad.reshape(ad.matmul(flat, params.w_enc), (b, n, params.w_enc.shape[1]))
    q = ad.reshape(ad.matmul(s_prev, params.w_dec), (b, 1, params.w_dec.shape[1]))
    scores = ad.dot_last(ad.tanh(ad.add(enc_proj, q)), params.v)
    if mask is not None:
        scores = ad.add(scores, (mask - 1.0) * NEG_INF_SCORE)
    alphas = ad.softmax(scores)
    context = ad.attn_mix(h_enc, alphas)
    return context, alphas


def dense(x, w, b, activation: str = "identity"):
    """Fully connected layer: activation(x @ w + b)."""
    y = ad.add(ad.matmul(x, w), b)
    if activation == "identity":
        return y
    if activation == "tanh":
        return ad.tanh(y)
    if activation == "sigmoid":
        return ad.sigmoid(y)
    raise ValueError(f"dense: unknown activation {activation!r}")


def dropout_mask(
    rng: np.random.Generator, shape, keep_prob: float, dtype=np.float32
) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 or 1/keep_prob."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"dropout_mask: keep_prob must be in (0, 1], got {keep_prob}")
    if keep_prob == 1.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) < keep_prob
    return keep.astype(dtype) / dtype(keep_prob)


def sample_masks(
    widths: Mapping[str, int],
    keep_prob: float,
    rng: np.random.Generator,
    batch_size: int = 1,
    dtype=np.float32,
) -> DropoutMasks:
    """Sample one mask per requested site, shaped (batch_size, width).

    Sites are the field names of ``DropoutMasks``. Each sequence in the
    batch draws its own mask row, and the caller applies the same array at
    every timestep.
    """
    values: dict[str, np.ndarray] = {}
    for site in sorted(widths):
        if site not in _MASK_SITES:
            raise ValueError(f"sample_masks: unknown dropout site {site!r}")
        values[site] = dropout_mask(rng, (batch_size, widths[site]), keep_prob, dtype)
    return DropoutMasks(**values)
