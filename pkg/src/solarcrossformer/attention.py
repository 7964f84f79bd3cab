"""Layer normalisation, (masked) multi-head attention, geographic RoPE and ring masks.

Positions are ``(n, 2)`` arrays of ``(latitude, longitude)`` in degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ndiff as nd
from .ndiff import Tensor

EARTH_RADIUS_KM = 6371.0
DEFAULT_RING_EDGES_KM = (0.0, 40.0, 90.0, 180.0, math.inf)
DEFAULT_DELTA = 50.0
ROPE_SPAN = 100.0


@dataclass(frozen=True)
class RingMaskSpec:
    """Per-head distance annuli ``[edges[a], edges[a+1])`` in km."""

    edges: tuple = DEFAULT_RING_EDGES_KM
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        if len(edges) < 2:
            raise ValueError("ring spec needs at least one head")
        if edges[0] != 0.0 or edges[-1] != math.inf:
            raise ValueError(f"ring edges must start at 0 and end at inf, got {edges}")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"ring edges must be strictly increasing, got {edges}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    @property
    def n_heads(self) -> int:
        return len(self.edges) - 1

    @property
    def head_radii(self) -> list[tuple[float, float]]:
        return list(zip(self.edges[:-1], self.edges[1:]))

    @classmethod
    def from_radii(cls, head_radii, delta: float = DEFAULT_DELTA) -> "RingMaskSpec":
        head_radii = [tuple(p) for p in head_radii]
        for (_, outer), (inner, _) in zip(head_radii, head_radii[1:]):
            if outer != inner:
                raise ValueError(f"ring radii are not contiguous: {head_radii}")
        return cls(tuple([head_radii[0][0]] + [p[1] for p in head_radii]), delta)


@dataclass
class AttentionConfig:
    embed_dim: int
    heads: int
    dim_per_head: int
    dropout: float = 0.0

    def __post_init__(self):
        if min(self.embed_dim, self.heads, self.dim_per_head) <= 0:
            raise ValueError("attention dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x = nd.as_tensor(x)
    if x.shape[-1] == 0:
        raise ValueError("layer_norm over an empty feature axis")
    centered = x - x.mean(axis=-1, keepdims=True)
    scale = nd.sqrt(x.var(axis=-1, keepdims=True) + eps)
    return centered / scale * gamma + beta


def masked_logits(q, k, mask=None, delta: float = DEFAULT_DELTA) -> Tensor:
    q, k = nd.as_tensor(q), nd.as_tensor(k)
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key feature mismatch: {q.shape} vs {k.shape}")
    if k.shape[-2] == 0:
        raise ValueError("attention over zero keys")
    logits = (q @ k.swap_last()) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None and delta != 0.0:
        logits = logits - delta * np.asarray(mask, dtype=float)
    return logits


def attention_weights(q, k, mask=None, delta: float = DEFAULT_DELTA) -> Tensor:
    """Row-stochastic weights ``softmax(q k^T / sqrt(d) - delta * mask)``."""
    return nd.softmax(masked_logits(q, k, mask, delta), axis=-1)


def masked_attention_weights(q, k, mask, delta: float = DEFAULT_DELTA):
    """Masked weights plus diagnostics on rows whose every key is masked."""
    m = np.asarray(mask, dtype=float)
    if not np.isin(m, (0.0, 1.0)).all():
        raise ValueError("mask entries must be 0 or 1")
    weights = attention_weights(q, k, m, delta)
    full_rows = np.broadcast_to(m, weights.shape).min(axis=-1) == 1.0
    return weights, {"fully_masked_rows": int(full_rows.sum())}


def scaled_dot_attention(q, k, v, mask=None, delta: float = DEFAULT_DELTA) -> Tensor:
    v = nd.as_tensor(v)
    k = nd.as_tensor(k)
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value length mismatch: {k.shape} vs {v.shape}")
    return attention_weights(q, k, mask, delta) @ v


def _split_heads(x: Tensor, heads: int, d_head: int) -> Tensor:
    # (..., n, heads*d_head) -> (..., heads, n, d_head)
    lead = x.shape[:-2]
    n = x.shape[-2]
    x = x.reshape(lead + (n, heads, d_head))
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return x.transpose(axes)


def _merge_heads(x: Tensor) -> Tensor:
    lead = x.shape[:-3]
    heads, n, d_head = x.shape[-3:]
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return x.transpose(axes).reshape(lead + (n, heads * d_head))


def multi_head_attention(q_in, k_in, v_in, cfg: AttentionConfig, weights: dict,
                         q_angles=None, k_angles=None, mask=None,
                         delta: float = DEFAULT_DELTA, return_weights: bool = False):
    """Bias-free per-head projections, attention, concatenation, output projection.

    ``weights`` holds ``wq``/``wk``/``wv`` of shape ``(d, heads*d_head)`` (head ``a``
    owns columns ``a*d_head:(a+1)*d_head``) and ``wo`` of shape
    ``(heads*d_head, d_out)``. Optional RoPE angles ``(n, d_head)`` rotate the
    projected queries/keys; ``mask`` is ``(heads, n, m)``.
    """
    h, dh = cfg.heads, cfg.dim_per_head
    q_in, k_in, v_in = nd.as_tensor(q_in), nd.as_tensor(k_in), nd.as_tensor(v_in)
    for name, src in (("wq", q_in), ("wk", k_in), ("wv", v_in)):
        if weights[name].shape != (src.shape[-1], h * dh):
            raise ValueError(f"{name} has shape {weights[name].shape}, expected {(src.shape[-1], h * dh)}")
    if weights["wo"].shape[0] != h * dh:
        raise ValueError(f"wo has shape {weights['wo'].shape}, expected ({h * dh}, d_out)")
    q = _split_heads(q_in @ weights["wq"], h, dh)
    k = _split_heads(k_in @ weights["wk"], h, dh)
    v = _split_heads(v_in @ weights["wv"], h, dh)
    if q_angles is not None:
        q = rope_apply(q, q_angles)
    if k_angles is not None:
        k = rope_apply(k, k_angles)
    if mask is not None and np.shape(mask)[0] != h:
        raise ValueError(f"mask has {np.shape(mask)[0]} heads, attention has {h}")
    alpha = attention_weights(q, k, mask, delta)
    out = _merge_heads(alpha @ v) @ weights["wo"]
    return (out, alpha) if return_weights else out


# ---------------------------------------------------------------------- RoPE

def normalize_coords(positions, bbox) -> np.ndarray:
    """Map ``(lat, lon)`` linearly from ``bbox = (lon_min, lat_min, lon_max, lat_max)`` to [0, 100]."""
    p = np.asarray(positions, dtype=float)
    lon_min, lat_min, lon_max, lat_max = bbox
    lat = (p[..., 0] - lat_min) / (lat_max - lat_min) * ROPE_SPAN
    lon = (p[..., 1] - lon_min) / (lon_max - lon_min) * ROPE_SPAN
    return np.stack([lat, lon], axis=-1)


def rope_angles(coords, d_head: int, base: float = 10000.0) -> np.ndarray:
    """Per-feature rotation angles ``(n, d_head)`` from normalised ``(lat, lon)``.

    The first ``d_head/4`` feature pairs turn with longitude, the rest with
    latitude; pair ``k`` within a half uses frequency ``base**(-2k/(d_head/2))``.
    """
    if d_head % 4:
        raise ValueError(f"d_head must be divisible by 4, got {d_head}")
    c = np.asarray(coords, dtype=float)
    quarter = d_head // 4
    freqs = base ** (-2.0 * np.arange(quarter) / (d_head / 2))
    lon_ang = c[..., 1:2] * freqs
    lat_ang = c[..., 0:1] * freqs
    pair_angles = np.concatenate([lon_ang, lat_ang], axis=-1)
    return np.repeat(pair_angles, 2, axis=-1)


def _pair_swap(d_head: int) -> np.ndarray:
    # x @ P maps (x0, x1, ...) -> (-x1, x0, ...)
    p = np.zeros((d_head, d_head))
    idx = np.arange(0, d_head, 2)
    p[idx + 1, idx] = -1.0
    p[idx, idx + 1] = 1.0
    return p


def rope_apply(x, angles) -> Tensor:
    """Rotate adjacent feature pairs of ``x`` (..., n, d_head) by ``angles`` (n, d_head)."""
    x = nd.as_tensor(x)
    angles = np.asarray(angles, dtype=float)
    return x * np.cos(angles) + (x @ _pair_swap(x.shape[-1])) * np.sin(angles)


def rope_rotate(x, positions, bbox, base: float = 10000.0) -> Tensor:
    x = nd.as_tensor(x)
    return rope_apply(x, rope_angles(normalize_coords(positions, bbox), x.shape[-1], base))


# ---------------------------------------------------------------- ring masks

def haversine_km(a, b) -> np.ndarray:
    """Pairwise great-circle distances ``(len(a), len(b))`` in km."""
    a = np.radians(np.asarray(a, dtype=float).reshape(-1, 2))
    b = np.radians(np.asarray(b, dtype=float).reshape(-1, 2))
    dlat = b[None, :, 0] - a[:, None, 0]
    dlon = b[None, :, 1] - a[:, None, 1]
    s = np.sin(dlat / 2) ** 2 + np.cos(a[:, None, 0]) * np.cos(b[None, :, 0]) * np.sin(dlon / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))


def build_ring_masks(centers, targets, spec: RingMaskSpec | None = None) -> np.ndarray:
    """``(N, M, heads)`` with 0 where the pair distance lies in the head's ring, else 1."""
    spec = spec or RingMaskSpec()
    dist = haversine_km(centers, targets)[..., None]
    inner = np.array(spec.edges[:-1])
    outer = np.array(spec.edges[1:])
    visible = (dist >= inner) & (dist < outer)
    return (~visible).astype(float)


def head_major(mask: np.ndarray) -> np.ndarray:
    """``(N, M, heads)`` -> ``(heads, N, M)`` as consumed by attention."""
    return np.ascontiguousarray(np.moveaxis(mask, -1, 0))
