"""Transformer building blocks over the autodiff engine.

Layers are plain functions that read their weights from a ``ModelParams``
mapping under a name prefix, e.g. ``linear(x, params, "enc.0.ffn.w1")``
uses ``enc.0.ffn.w1.weight`` and ``enc.0.ffn.w1.bias``.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .params import ModelParams

NEG_INF = -1e9


class ConfigError(ValueError):
    """Raised for invalid hyperparameters or model configuration."""


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


def init_linear(params: ModelParams, name: str, fan_in: int, fan_out: int,
                rng: np.random.Generator, dtype=np.float32, bias: bool = True) -> None:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    params.add(f"{name}.weight", rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
    if bias:
        params.add(f"{name}.bias", np.zeros(fan_out, dtype=dtype))


def init_layer_norm(params: ModelParams, name: str, dim: int, dtype=np.float32) -> None:
    params.add(f"{name}.gain", np.ones(dim, dtype=dtype))
    params.add(f"{name}.bias", np.zeros(dim, dtype=dtype))


def init_attention(params: ModelParams, name: str, dim: int, rng, dtype=np.float32) -> None:
    for proj in ("q", "k", "v", "o"):
        init_linear(params, f"{name}.{proj}", dim, dim, rng, dtype)


def init_ffn(params: ModelParams, name: str, dim: int, hidden: int, rng, dtype=np.float32) -> None:
    init_linear(params, f"{name}.w1", dim, hidden, rng, dtype)
    init_linear(params, f"{name}.w2", hidden, dim, rng, dtype)


def sinusoidal_positions(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rates = 1.0 / np.power(10000.0, (2 * (np.arange(dim) // 2)) / dim)
    angles = pos * rates[None, :]
    out = np.where(np.arange(dim)[None, :] % 2 == 0, np.sin(angles), np.cos(angles))
    return out.astype(dtype)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def linear(x: Tensor, params: ModelParams, name: str) -> Tensor:
    w = params[f"{name}.weight"]
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear {name}: input {x.shape} vs weight {w.shape}")
    out = x @ w
    b = params.get(f"{name}.bias")
    return out if b is None else out + b


def layer_norm(x: Tensor, params: ModelParams, name: str, eps: float = 1e-5) -> Tensor:
    return ad.layer_norm(x, params[f"{name}.gain"], params[f"{name}.bias"], eps)


def feed_forward(x: Tensor, params: ModelParams, name: str,
                 dropout: float = 0.0, rng=None) -> Tensor:
    h = ad.relu(linear(x, params, f"{name}.w1"))
    h = ad.dropout(h, dropout, rng)
    return linear(h, params, f"{name}.w2")


def causal_mask(length: int) -> np.ndarray:
    """Boolean ``(length, length)`` mask, true where attention is forbidden."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def multi_head_attention(queries: Tensor, keys: Tensor, values: Tensor, num_heads: int,
                         params: ModelParams, name: str, mask: np.ndarray | None = None,
                         return_weights: bool = False):
    """Scaled dot-product attention with ``num_heads`` heads.

    ``queries`` is ``(batch, T, d)``, ``keys``/``values`` are ``(batch, S, d)``
    (a missing batch axis is added and removed again).  ``mask`` is boolean,
    broadcastable to ``(batch, heads, T, S)``, true where attention is
    forbidden.
    """
    squeeze = queries.ndim == 2
    if squeeze:
        queries, keys, values = (t.reshape((1,) + t.shape) for t in (queries, keys, values))
    b, t_len, dim = queries.shape
    s_len = keys.shape[1]
    if dim % num_heads:
        raise ConfigError(f"model dimension {dim} is not divisible by {num_heads} heads")
    if keys.shape != values.shape or keys.shape[0] != b or keys.shape[2] != dim:
        raise ShapeError(f"attention {name}: queries {queries.shape}, keys {keys.shape}, values {values.shape}")
    dk = dim // num_heads

    q = linear(queries, params, f"{name}.q").reshape(b, t_len, num_heads, dk).transpose(0, 2, 1, 3)
    k = linear(keys, params, f"{name}.k").reshape(b, s_len, num_heads, dk).transpose(0, 2, 3, 1)
    v = linear(values, params, f"{name}.v").reshape(b, s_len, num_heads, dk).transpose(0, 2, 1, 3)
    scores = (q @ k) * (1.0 / np.sqrt(dk))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            np.broadcast_shapes(mask.shape, scores.shape)
        except ValueError:
            raise ShapeError(f"attention {name}: mask {mask.shape} vs scores {scores.shape}") from None
        scores = ad.masked_fill(scores, mask, NEG_INF)
    weights = ad.softmax(scores, axis=-1)
    ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, t_len, dim)
    out = linear(ctx, params, f"{name}.o")
    if squeeze:
        out = out.reshape(t_len, dim)
    return (out, weights) if return_weights else out


def encoder_layer(x: Tensor, params: ModelParams, name: str, num_heads: int,
                  pad_mask: np.ndarray | None, eps: float = 1e-5,
                  dropout: float = 0.0, rng=None) -> Tensor:
    """Post-norm transformer encoder layer.

    ``pad_mask`` is ``(batch, S)`` boolean, true at padding.
    """
    key_mask = None if pad_mask is None else pad_mask[:, None, None, :]
    h = multi_head_attention(x, x, x, num_heads, params, f"{name}.attn", key_mask)
    x = layer_norm(x + ad.dropout(h, dropout, rng), params, f"{name}.ln1", eps)
    h = feed_forward(x, params, f"{name}.ffn", dropout, rng)
    return layer_norm(x + ad.dropout(h, dropout, rng), params, f"{name}.ln2", eps)


def init_encoder_layer(params: ModelParams, name: str, dim: int, hidden: int, rng, dtype) -> None:
    init_attention(params, f"{name}.attn", dim, rng, dtype)
    init_layer_norm(params, f"{name}.ln1", dim, dtype)
    init_ffn(params, f"{name}.ffn", dim, hidden, rng, dtype)
    init_layer_norm(params, f"{name}.ln2", dim, dtype)
