"""Attention kernels: factorized token mixing with convolutional position
encodings, plus the token-reduced and channel-mixing variants used by the
multi-stage bridge.

Token sequences are [B, N, C]; spatial layouts are [B, C, H, W].
"""

from __future__ import annotations

import math

from . import ops
from .autodiff import Variable
from .nn import Conv2d, FeedForward, LayerNorm, Linear, Module
from .tensor import DimensionError


def map_to_tokens(x) -> Variable:
    """[B, C, H, W] -> [B, H*W, C]."""
    b, c, h, w = x.shape
    return ops.reshape(ops.permute(x, (0, 2, 3, 1)), (b, h * w, c))


def tokens_to_map(x, hw) -> Variable:
    """[B, H*W, C] -> [B, C, H, W]."""
    b, n, c = x.shape
    h, w = hw
    if n != h * w:
        raise DimensionError(f"token count {n} != {h}x{w}")
    return ops.permute(ops.reshape(x, (b, h, w, c)), (0, 3, 1, 2))


def _split_heads(x, heads) -> Variable:
    """[B, N, C] -> [B, h, N, C/h]."""
    b, n, c = x.shape
    return ops.permute(ops.reshape(x, (b, n, heads, c // heads)), (0, 2, 1, 3))


def _merge_heads(x) -> Variable:
    """[B, h, N, d] -> [B, N, h*d]."""
    b, h, n, d = x.shape
    return ops.reshape(ops.permute(x, (0, 2, 1, 3)), (b, n, h * d))


class ConvPositionEncoding(Module):
    """Residual depthwise 3x3 over the spatial layout of a token sequence."""

    def __init__(self, dim: int, rng):
        self.proj = Conv2d(dim, dim, 3, rng, stride=1, pad=1, groups=dim)

    def __call__(self, x, hw):
        feat = tokens_to_map(x, hw)
        return ops.add(x, map_to_tokens(self.proj(feat)))


class ConvRelPositionEncoding(Module):
    """Relative-position term: depthwise 3x3 over V in 2-D layout, gated by Q.

    Returns per-head tokens [B, h, N, d] to add to the attention output.
    """

    def __init__(self, dim: int, heads: int, rng):
        self.heads = heads
        self.conv = Conv2d(dim, dim, 3, rng, stride=1, pad=1, groups=dim)

    def __call__(self, q_heads, v_heads, hw):
        v = _merge_heads(v_heads)
        conv_v = map_to_tokens(self.conv(tokens_to_map(v, hw)))
        return ops.mul(q_heads, _split_heads(conv_v, self.heads))


class FactorizedAttention(Module):
    """Linear-complexity attention: softmax(K) aggregates V into a d x d
    context, queries scaled by 1/sqrt(N) read it back; optional relative
    position term added before the output projection.
    """

    def __init__(self, dim: int, heads: int, rng, use_crpe: bool = True):
        if dim % heads:
            raise DimensionError(f"dim {dim} not divisible by heads {heads}")
        self.d_model = dim
        self.heads = heads
        self.d_k = self.d_v = dim
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.crpe = ConvRelPositionEncoding(dim, heads, rng) if use_crpe else None
        self.out = Linear(dim, dim, rng)

    def __call__(self, x, hw=None):
        b, n, c = x.shape
        if self.crpe is not None:
            if hw is None or hw[0] * hw[1] != n:
                raise DimensionError(f"factorized attention needs H*W == N == {n}, got {hw}")
        qh = _split_heads(self.q(x), self.heads)
        kh = _split_heads(self.k(x), self.heads)
        vh = _split_heads(self.v(x), self.heads)
        k_sm = ops.softmax(kh, axis=2)  # over the token axis
        context = ops.matmul(ops.permute(k_sm, (0, 1, 3, 2)), vh)  # [B,h,d,d]
        att = ops.matmul(ops.scale(qh, 1.0 / math.sqrt(n)), context)
        if self.crpe is not None:
            att = ops.add(att, self.crpe(qh, vh, hw))
        return self.out(_merge_heads(att))


class TokenAwareAttention(Module):
    """Dense attention against a token-reduced K/V: N tokens attend to N/r
    rows built by reshaping runs of r tokens to depth r*C and projecting
    back to C. r = 1 reduces to standard dot-product attention.
    """

    def __init__(self, dim: int, rng, heads: int = 1, r: int = 1):
        if dim % heads:
            raise DimensionError(f"dim {dim} not divisible by heads {heads}")
        if r < 1:
            raise DimensionError(f"reduction r must be >= 1, got {r}")
        self.d_model = dim
        self.heads = heads
        self.d_k = self.d_v = dim
        self.r = r
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.k_red = Linear(r * dim, dim, rng)
        self.v_red = Linear(r * dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def _reduce(self, x, proj):
        b, n, c = x.shape
        return proj(ops.reshape(x, (b, n // self.r, self.r * c)))

    def __call__(self, x, return_attn: bool = False):
        b, n, c = x.shape
        if n % self.r:
            raise DimensionError(f"token count {n} not divisible by reduction r={self.r}")
        qh = _split_heads(self.q(x), self.heads)
        kh = _split_heads(self._reduce(self.k(x), self.k_red), self.heads)
        vh = _split_heads(self._reduce(self.v(x), self.v_red), self.heads)
        d_head = c // self.heads
        scores = ops.scale(ops.matmul(qh, ops.permute(kh, (0, 1, 3, 2))),
                           1.0 / math.sqrt(d_head))
        attn = ops.softmax(scores, axis=-1)  # [B,h,N,N/r]
        out = self.out(_merge_heads(ops.matmul(attn, vh)))
        if return_attn:
            return out, attn
        return out


class ChannelAwareAttention(Module):
    """Channel mixing in O(d^2 N): K (softmax over tokens) aggregates V into
    a d_k x d_v context, Q (softmax over channels) reads it back.
    d_k = d/2, d_v = d.
    """

    def __init__(self, dim: int, rng):
        if dim % 2:
            raise DimensionError(f"channel-aware attention needs even dim, got {dim}")
        self.d_model = dim
        self.heads = 1
        self.d_k = dim // 2
        self.d_v = dim
        self.q = Linear(dim, self.d_k, rng)
        self.k = Linear(dim, self.d_k, rng)
        self.v = Linear(dim, self.d_v, rng)
        self.out = Linear(self.d_v, dim, rng)

    def __call__(self, x, return_parts: bool = False):
        b, n, c = x.shape
        inv = 1.0 / math.sqrt(n)
        k_sm = ops.softmax(ops.scale(self.k(x), inv), axis=1)  # columns: token axis
        q_sm = ops.softmax(ops.scale(self.q(x), inv), axis=2)  # rows: channel axis
        v = self.v(x)
        context = ops.matmul(ops.permute(k_sm, (0, 2, 1)), v)  # [B, d_k, d_v]
        mixed = ops.matmul(q_sm, context)  # [B, N, d_v]
        out = self.out(mixed)
        if return_parts:
            return out, (q_sm, k_sm, v, context)
        return out


class EfficientTransformerBlock(Module):
    """conv position encoding -> prenorm factorized attention (+ relative
    position term) -> prenorm feed-forward, both residual."""

    def __init__(self, dim: int, heads: int, rng, use_crpe: bool = True):
        self.cpe = ConvPositionEncoding(dim, rng)
        self.norm1 = LayerNorm(dim)
        self.attn = FactorizedAttention(dim, heads, rng, use_crpe=use_crpe)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, rng)

    def __call__(self, x, hw):
        x = self.cpe(x, hw)
        x = ops.add(x, self.attn(self.norm1(x), hw))
        return ops.add(x, self.ffn(self.norm2(x)))
