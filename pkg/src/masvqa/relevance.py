"""Gradient-weighted token-to-patch relevance and per-token strength.

Relevance is the head average of attention times the positive part of its
gradient; each token's patch map is then min-max normalized independently,
and token strength is the patch average of the normalized map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RelevanceMap:
    values: np.ndarray  # [L, P] float64, non-negative
    normalized: bool


@dataclass
class TokenStrength:
    values: np.ndarray  # [L] float64


def _check_pair(attn: np.ndarray, grad: np.ndarray) -> None:
    if attn.shape != grad.shape:
        raise ValueError(f"shape mismatch: {attn.shape} vs {grad.shape}")
    if attn.ndim != 3:
        raise ValueError(f"expected [H, L, *] tensors, got ndim={attn.ndim}")
    if not (np.isfinite(attn).all() and np.isfinite(grad).all()):
        raise ValueError("non-finite input")


def token_patch_relevance(cross_attn: np.ndarray, cross_grad: np.ndarray) -> RelevanceMap:
    """R[i,p] = (1/H) sum_h attn[h,i,p] * max(grad[h,i,p], 0), in float64."""
    _check_pair(cross_attn, cross_grad)
    attn = cross_attn.astype(np.float64)
    grad = np.maximum(cross_grad.astype(np.float64), 0.0)
    values = (attn * grad).mean(axis=0)
    return RelevanceMap(values=values, normalized=False)


def normalize_token_maps(rel: RelevanceMap) -> RelevanceMap:
    """Min-max normalize each token row to [0,1]; constant rows map to zeros."""
    vals = rel.values
    lo = vals.min(axis=1, keepdims=True)
    hi = vals.max(axis=1, keepdims=True)
    span = hi - lo
    out = np.zeros_like(vals)
    live = (span > 0).ravel()
    if live.any():
        out[live] = (vals[live] - lo[live]) / span[live]
    return RelevanceMap(values=out, normalized=True)


def token_strength(rel: RelevanceMap) -> TokenStrength:
    """s[i] = (1/P) sum_p R[i,p] over a normalized relevance map."""
    if not rel.normalized:
        raise ValueError("token_strength expects a normalized relevance map")
    return TokenStrength(values=rel.values.mean(axis=1))
