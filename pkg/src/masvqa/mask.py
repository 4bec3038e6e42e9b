"""Knowledge-guided patch mask: adaptive grouped token reweighting,
token-wise percentile thresholding, OR composition, and mask rendering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import AttentionDump, EmptyGroup, SequenceLayout, layout_of
from .relevance import (
    RelevanceMap,
    TokenStrength,
    normalize_token_maps,
    token_patch_relevance,
    token_strength,
)


class NonPositiveTemperature(ValueError):
    pass


@dataclass
class TokenWeights:
    values: np.ndarray  # [L], zero outside the knowledge/question groups
    group_factor: tuple[float, float]  # (alpha_K, alpha_Q)


@dataclass
class PatchMask:
    bits: np.ndarray  # [g, g] bool

    @property
    def grid(self) -> int:
        return self.bits.shape[0]

    def flat(self) -> np.ndarray:
        return self.bits.reshape(-1)


def _softmax(x: np.ndarray) -> np.ndarray:
    # max-subtraction for overflow safety; identical result by shift invariance
    z = np.exp(x - x.max())
    return z / z.sum()


def group_weights(s: TokenStrength, layout: SequenceLayout, tau: float) -> TokenWeights:
    """Per-group softmax of token strength, scaled by a group-level adaptive
    factor from the softmax of the two group means, then renormalized to sum 1."""
    if tau <= 0:
        raise NonPositiveTemperature(f"tau must be positive, got {tau}")
    idx_k = np.fromiter(layout.idx_knowledge, dtype=np.intp)
    idx_q = np.fromiter(layout.idx_question, dtype=np.intp)
    if idx_k.size == 0 or idx_q.size == 0:
        raise EmptyGroup("both token groups must be non-empty")
    vals = s.values
    w = np.zeros(len(vals))
    w_k = _softmax(vals[idx_k] / tau)
    w_q = _softmax(vals[idx_q] / tau)
    alpha = _softmax(np.array([vals[idx_k].mean(), vals[idx_q].mean()]) / tau)
    w[idx_k] = alpha[0] * w_k
    w[idx_q] = alpha[1] * w_q
    w /= w.sum()
    return TokenWeights(values=w, group_factor=(float(alpha[0]), float(alpha[1])))


def weighted_scores(rel: RelevanceMap, weights: TokenWeights) -> np.ndarray:
    """R_hat[i,p] = w[i] * R[i,p]."""
    if rel.values.shape[0] != weights.values.shape[0]:
        raise ValueError(
            f"token count mismatch: {rel.values.shape[0]} vs {weights.values.shape[0]}"
        )
    return weights.values[:, None] * rel.values


def _row_quantiles(mat: np.ndarray, rho: float) -> np.ndarray:
    """Linear-interpolation quantile of each row: sort ascending, position
    q = (P-1)*rho/100, interpolate between the two closest ranks."""
    if not (0 <= rho <= 100):
        raise ValueError(f"rho must be in [0, 100], got {rho}")
    srt = np.sort(mat, axis=1)
    q = (mat.shape[1] - 1) * rho / 100.0
    lo = int(np.floor(q))
    hi = int(np.ceil(q))
    frac = q - lo
    return srt[:, lo] + frac * (srt[:, hi] - srt[:, lo])


def quantile(row: np.ndarray, rho: float) -> float:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size < 1:
        raise ValueError("quantile expects a non-empty 1-D array")
    return float(_row_quantiles(row[None, :], rho)[0])


def token_threshold_masks(scores: np.ndarray, rho: float) -> np.ndarray:
    """B[i,p] = scores[i,p] > per-row rho-quantile (strict inequality)."""
    thresholds = _row_quantiles(scores, rho)
    return scores > thresholds[:, None]


def compose_mask(token_masks: np.ndarray, grid: int) -> PatchMask:
    """OR the per-token masks across tokens and reshape row-major to g x g."""
    if token_masks.shape[1] != grid * grid:
        raise ValueError(f"P={token_masks.shape[1]} does not match grid {grid}")
    return PatchMask(bits=token_masks.any(axis=0).reshape(grid, grid))


def render_mask(mask: PatchMask, width: int, height: int) -> np.ndarray:
    """Nearest-neighbor upsample to a [height, width] boolean pixel mask;
    pixel (x, y) takes the bit of patch (floor(y*g/height), floor(x*g/width))."""
    g = mask.grid
    if width < g or height < g:
        raise ValueError(f"output {width}x{height} smaller than grid {g}")
    rows = (np.arange(height) * g) // height
    cols = (np.arange(width) * g) // width
    return mask.bits[np.ix_(rows, cols)]


def apply_mask(image: np.ndarray, pixel_mask: np.ndarray) -> np.ndarray:
    """White out every pixel where the mask is false; keep the rest."""
    if image.shape[:2] != pixel_mask.shape:
        raise ValueError(f"image {image.shape[:2]} vs mask {pixel_mask.shape}")
    out = image.copy()
    out[~pixel_mask] = 255
    return out


def build_mask(dump: AttentionDump, rho: float = 90.0, tau: float = 1.0) -> PatchMask:
    """Full image-side pipeline from one dump: relevance, normalization,
    strength, grouped weights, thresholding, OR composition."""
    layout = layout_of(dump.meta)
    rel = normalize_token_maps(token_patch_relevance(dump.cross_attn, dump.cross_grad))
    s = token_strength(rel)
    w = group_weights(s, layout, tau)
    scores = weighted_scores(rel, w)
    bits = token_threshold_masks(scores, rho)
    return compose_mask(bits, dump.meta.grid)
