"""SolarCrossFormer: temporal, pixels-nodes and nodes-nodes attention encoder with a
clear-sky conditioned temporal decoder.

Weights live in a flat ``dict[str, Tensor]``; block functions receive that dict
and a name prefix. Model inputs are in normalised units (GHI / 1.3 kW/m^2),
the clear-sky horizon in W/m^2.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import ndiff as nd
from .attention import (
    DEFAULT_DELTA,
    DEFAULT_RING_EDGES_KM,
    AttentionConfig,
    RingMaskSpec,
    build_ring_masks,
    head_major,
    layer_norm,
    multi_head_attention,
    normalize_coords,
    rope_angles,
)
from .ndiff import Tensor
from .solar import cyclical_encode

GHI_SCALE = 1.3  # kW/m^2, peak normalisation
CLEARSKY_SCALE_WM2 = 1300.0
OUTPUT_CLIP = (0.0, 1.5)  # kW/m^2
CHECKPOINT_FORMAT = "solarcrossformer-checkpoint"
CHECKPOINT_VERSION = 1

SWISS_BBOX = (5.9, 45.8, 10.5, 47.9)  # lon_min, lat_min, lon_max, lat_max


class ShapeMismatchError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_features: int = 3
    embed_dim: int = 128
    transformer_depth: int = 3
    transformer_heads: int = 4
    dim_per_head: int = 64
    mlp_ratio: int = 3
    dropout: float = 0.3
    decoder_dim: int = 64
    decoder_depth: int = 3
    decoder_heads: int = 4
    decoder_dim_per_head: int = 64
    output_heads: int = 3
    patch_size: int = 4
    image_size: int = 96
    channels: int = 4
    past_steps: int = 96
    horizon: int = 96
    use_images: bool = True
    ring_edges: tuple = DEFAULT_RING_EDGES_KM
    delta: float = DEFAULT_DELTA
    rope_base: float = 10000.0
    bbox: tuple = SWISS_BBOX
    ln_eps: float = 1e-5

    def __post_init__(self):
        self.ring_edges = tuple(float(e) for e in self.ring_edges)
        self.bbox = tuple(float(b) for b in self.bbox)
        ints = ("n_features", "embed_dim", "transformer_depth", "transformer_heads", "dim_per_head",
                "mlp_ratio", "decoder_dim", "decoder_depth", "decoder_heads", "decoder_dim_per_head",
                "output_heads", "patch_size", "image_size", "channels", "past_steps", "horizon")
        for name in ints:
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.output_heads not in (1, 3):
            raise ValueError("output_heads must be 1 (MSE) or 3 (quantiles)")
        if self.dim_per_head % 4:
            raise ValueError("dim_per_head must be divisible by 4 for RoPE")
        if self.ring_spec.n_heads != self.transformer_heads:
            raise ValueError(
                f"{self.ring_spec.n_heads} ring annuli for {self.transformer_heads} attention heads")

    @property
    def ring_spec(self) -> RingMaskSpec:
        return RingMaskSpec(self.ring_edges, self.delta)

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size ** 2

    @property
    def encoder_attention(self) -> AttentionConfig:
        return AttentionConfig(self.embed_dim, self.transformer_heads, self.dim_per_head, self.dropout)

    @property
    def decoder_attention(self) -> AttentionConfig:
        return AttentionConfig(self.decoder_dim, self.decoder_heads, self.decoder_dim_per_head, self.dropout)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ring_edges"] = ["inf" if math.isinf(e) else e for e in self.ring_edges]
        d["bbox"] = list(self.bbox)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "ring_edges" in d:
            d["ring_edges"] = tuple(float(e) for e in d["ring_edges"])
        return cls(**d)

    def data_signature(self) -> str:
        img = f"{self.image_size}x{self.image_size}x{self.channels}" if self.use_images else "none"
        return f"features={self.n_features} images={img} T={self.past_steps} H={self.horizon}"


# -------------------------------------------------------------- parameters

def _uniform(rng, fan_in, shape):
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _attn_shapes(prefix, d_q, d_kv, att: AttentionConfig, d_out):
    inner = att.heads * att.dim_per_head
    return {
        f"{prefix}.wq": (d_q, inner),
        f"{prefix}.wk": (d_kv, inner),
        f"{prefix}.wv": (d_kv, inner),
        f"{prefix}.wo": (inner, d_out),
    }


def _mlp_shapes(prefix, d_in, hidden, d_out):
    return {
        f"{prefix}.w1": (d_in, 2 * hidden),
        f"{prefix}.b1": (2 * hidden,),
        f"{prefix}.w2": (hidden, d_out),
        f"{prefix}.b2": (d_out,),
    }


def _ln_shapes(prefix, d):
    return {f"{prefix}.gamma": (d,), f"{prefix}.beta": (d,)}


def _temporal_shapes(prefix, d, att, ratio):
    shapes = {}
    shapes.update(_ln_shapes(f"{prefix}.ln1", d))
    shapes.update(_attn_shapes(f"{prefix}.attn", d, d, att, d))
    shapes.update(_ln_shapes(f"{prefix}.ln2", d))
    shapes.update(_mlp_shapes(f"{prefix}.mlp", d, ratio * d, d))
    return shapes


def _cross_shapes(prefix, d, att, ratio):
    shapes = {}
    shapes.update(_ln_shapes(f"{prefix}.ln_q", d))
    shapes.update(_ln_shapes(f"{prefix}.ln_kv", d))
    shapes.update(_attn_shapes(f"{prefix}.attn", d, d, att, d))
    shapes.update(_ln_shapes(f"{prefix}.ln2", d))
    shapes.update(_mlp_shapes(f"{prefix}.mlp", d, ratio * d, d))
    return shapes


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Name -> shape of every learnable tensor, in a fixed order."""
    d, dd, r = cfg.embed_dim, cfg.decoder_dim, cfg.mlp_ratio
    enc, dec = cfg.encoder_attention, cfg.decoder_attention
    shapes: dict[str, tuple] = {
        "ts_embed.w": (cfg.n_features + 4, d),
        "ts_embed.b": (d,),
        "mask_token": (1,),
    }
    if cfg.use_images:
        shapes["patch_embed.w"] = (cfg.patch_dim, d)
        shapes["patch_embed.b"] = (d,)
    for i in range(cfg.transformer_depth):
        shapes.update(_temporal_shapes(f"temporal.{i}", d, enc, r))
    if cfg.use_images:
        for i in range(cfg.transformer_depth):
            shapes.update(_cross_shapes(f"pixel_cross.{i}", d, enc, r))
    for i in range(cfg.transformer_depth):
        shapes.update(_cross_shapes(f"node_cross.{i}", d, enc, r))
    shapes["decoder.handoff.w"] = (d, dd)
    shapes["decoder.handoff.b"] = (dd,)
    shapes["decoder.clearsky.w"] = (1, dd)
    shapes["decoder.clearsky.b"] = (dd,)
    shapes["decoder.lead"] = (cfg.horizon, dd)
    for i in range(cfg.decoder_depth):
        shapes.update(_temporal_shapes(f"decoder.block.{i}", dd, dec, r))
    shapes.update(_ln_shapes("decoder.norm", dd))
    for q in range(cfg.output_heads):
        shapes.update(_mlp_shapes(f"head.{q}", dd, r * dd, 1))
    return shapes


def init_weights(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Uniform +-sqrt(1/fan_in) projections, unit LayerNorm, zero mask token."""
    rng = np.random.default_rng(seed)
    shapes = parameter_shapes(cfg)
    weights = {}
    for name, shape in shapes.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            value = np.ones(shape)
        elif leaf == "beta" or name == "mask_token":
            value = np.zeros(shape)
        elif name == "decoder.lead":
            value = rng.uniform(-0.1, 0.1, size=shape)
        elif leaf.startswith("b"):
            fan_in = shapes[name.rsplit(".", 1)[0] + ".w" + leaf[1:]][0]
            value = _uniform(rng, fan_in, shape)
        else:
            value = _uniform(rng, shape[0], shape)
        weights[name] = Tensor(value, requires_grad=True)
    return weights


def check_weights(cfg: ModelConfig, weights: dict) -> None:
    expected = parameter_shapes(cfg)
    got = {k: tuple(v.shape) for k, v in weights.items()}
    if got != expected:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        wrong = sorted(k for k in set(got) & set(expected) if got[k] != expected[k])
        raise ShapeMismatchError(
            f"weights do not match config: missing={missing[:5]} extra={extra[:5]} "
            f"wrong_shape={[(k, got[k], expected[k]) for k in wrong[:5]]}")


def _sub(weights: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in weights.items() if k.startswith(prefix + ".")}


# ----------------------------------------------------------------- blocks

class RunContext:
    """Train flag plus a counter-based dropout seed stream for one forward pass."""

    def __init__(self, train: bool = False, seed: int | None = None, rate: float = 0.0):
        self.train = train
        self.seed = 0 if seed is None else int(seed)
        self.rate = rate
        self.counter = 0

    def dropout(self, x: Tensor) -> Tensor:
        if not self.train or self.rate == 0.0:
            return x
        self.counter += 1
        return nd.dropout(x, self.rate, (self.seed, self.counter), True)


def linear(x, w, b=None) -> Tensor:
    out = nd.as_tensor(x) @ w
    return out if b is None else out + b


def geglu_mlp(x, p: dict) -> Tensor:
    h = linear(x, p["w1"], p["b1"])
    hidden = h.shape[-1] // 2
    return linear(h[..., :hidden] * nd.gelu(h[..., hidden:]), p["w2"], p["b2"])


def _ln(x, p: dict, eps: float) -> Tensor:
    return layer_norm(x, p["gamma"], p["beta"], eps)


def temporal_block(x, p: dict, att: AttentionConfig, ctx: RunContext | None = None,
                   eps: float = 1e-5) -> Tensor:
    """Pre-norm self-attention over the second-to-last axis, then a GeGLU MLP."""
    ctx = ctx or RunContext()
    x = nd.as_tensor(x)
    z0 = _ln(x, _sub(p, "ln1"), eps)
    z1 = x + ctx.dropout(multi_head_attention(z0, z0, z0, att, _sub(p, "attn")))
    return z1 + ctx.dropout(geglu_mlp(_ln(z1, _sub(p, "ln2"), eps), _sub(p, "mlp")))


def cross_block(x_ts, context, p: dict, att: AttentionConfig, q_angles=None, k_angles=None,
                mask=None, delta: float = DEFAULT_DELTA, ctx: RunContext | None = None,
                eps: float = 1e-5) -> Tensor:
    """Masked RoPE cross-attention of ``x_ts`` (T, N, d) onto ``context`` (T, M, d).

    ``mask`` is ``(N, M, heads)`` of {0, 1}.
    """
    ctx = ctx or RunContext()
    x_ts, context = nd.as_tensor(x_ts), nd.as_tensor(context)
    if x_ts.shape[0] != context.shape[0] or x_ts.shape[-1] != context.shape[-1]:
        raise ValueError(f"cross_block input mismatch: {x_ts.shape} vs {context.shape}")
    hm = None
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (x_ts.shape[1], context.shape[1], att.heads):
            raise ValueError(
                f"mask shape {mask.shape} does not match {(x_ts.shape[1], context.shape[1], att.heads)}")
        hm = head_major(mask)
    z0 = _ln(x_ts, _sub(p, "ln_q"), eps)
    z1 = _ln(context, _sub(p, "ln_kv"), eps)
    z2 = x_ts + ctx.dropout(multi_head_attention(
        z0, z1, z1, att, _sub(p, "attn"), q_angles=q_angles, k_angles=k_angles, mask=hm, delta=delta))
    return z2 + ctx.dropout(geglu_mlp(_ln(z2, _sub(p, "ln2"), eps), _sub(p, "mlp")))


def embed_time_series(x, timestamps, w, b) -> Tensor:
    """Concatenate the cyclical time encoding to ``x`` (N, T, f) and project to d."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ValueError(f"station features must be (N, T, f), got {x.shape}")
    enc = cyclical_encode(timestamps)
    if enc.shape[0] != x.shape[1]:
        raise ValueError(f"{enc.shape[0]} timestamps for {x.shape[1]} steps")
    inp = np.concatenate([x, np.broadcast_to(enc, x.shape[:2] + (4,))], axis=-1)
    if inp.shape[-1] != w.shape[0]:
        raise ValueError(f"shape mismatch in embedding: input {inp.shape} vs weight {w.shape}")
    return linear(inp, w, b)


def patchify(x_sat, patch_size: int) -> np.ndarray:
    """(h, w, T, c) -> (T, h'*w', p*p*c), patches row-major, features (p_row, p_col, c)."""
    x = np.asarray(x_sat, dtype=float)
    h, w, t, c = x.shape
    p = patch_size
    if h % p or w % p:
        raise ValueError(f"image {h}x{w} not divisible by patch size {p}")
    x = x.reshape(h // p, p, w // p, p, t, c).transpose(4, 0, 2, 1, 3, 5)
    return x.reshape(t, (h // p) * (w // p), p * p * c)


def patchify_embed(x_sat, patch_size: int, w, b) -> Tensor:
    """(h, w, T, c) image stack -> (T, h'*w', d) patch embeddings."""
    return linear(patchify(x_sat, patch_size), w, b)


def patch_centers(image_bbox, image_size: int, patch_size: int) -> np.ndarray:
    """``(lat, lon)`` of every patch centre; row 0 is the northern edge."""
    lon_min, lat_min, lon_max, lat_max = image_bbox
    n = image_size // patch_size
    dlat = (lat_max - lat_min) / image_size
    dlon = (lon_max - lon_min) / image_size
    centre = (np.arange(n) * patch_size + patch_size / 2.0)
    lat = lat_max - centre * dlat
    lon = lon_min + centre * dlon
    grid_lat, grid_lon = np.meshgrid(lat, lon, indexing="ij")
    return np.stack([grid_lat.ravel(), grid_lon.ravel()], axis=-1)


def apply_mask_token(x: Tensor, masked, token: Tensor) -> Tensor:
    """Replace rows selected by boolean ``masked`` (broadcast against x) with ``token``."""
    m = np.asarray(masked, dtype=float)
    if not m.any():
        return x
    return x * (1.0 - m) + token * m


# ----------------------------------------------------------------- model

@dataclass
class ForecastBatch:
    values: np.ndarray  # (N_d, H, Q) kW/m^2
    node_ids: list
    lead_times: np.ndarray
    quantiles: tuple = ()


@dataclass
class ModelInputs:
    """One forecast window in model units."""

    features: np.ndarray          # (N, T, f), GHI / 1.3 in column 0
    past_times: np.ndarray        # (T,) datetime64
    positions: np.ndarray         # (N, 2) lat, lon
    clearsky_future: np.ndarray   # (N, H) W/m^2
    images: np.ndarray | None = None        # (T, h, w, c)
    patch_positions: np.ndarray | None = None  # (P, 2)
    node_ids: list = field(default_factory=list)
    future_times: np.ndarray | None = None


class SolarCrossFormer:
    def __init__(self, cfg: ModelConfig, weights: dict | None = None, seed: int = 0):
        self.cfg = cfg
        self.weights = weights if weights is not None else init_weights(cfg, seed)
        check_weights(cfg, self.weights)
        self._mask_cache: dict = {}

    def parameters(self) -> list[Tensor]:
        return list(self.weights.values())

    def zero_grad(self) -> None:
        for w in self.weights.values():
            w.zero_grad()

    def _ring_masks(self, centers, targets):
        key = (np.asarray(centers).tobytes(), np.asarray(targets).tobytes())
        if key not in self._mask_cache:
            if len(self._mask_cache) > 64:
                self._mask_cache.clear()
            self._mask_cache[key] = build_ring_masks(centers, targets, self.cfg.ring_spec)
        return self._mask_cache[key]

    def encode(self, inp: ModelInputs, node_mask=None, patch_mask=None,
               ctx: RunContext | None = None, last_step_only: bool = False) -> Tensor:
        """Encoder states (T, N, d), or (1, N, d) for the final step only.

        Cross blocks act on each time step independently and the decoder reads
        only the final step, so ``last_step_only`` skips work that cannot reach
        the forecast.
        """
        cfg, w = self.cfg, self.weights
        ctx = ctx or RunContext()
        eps = cfg.ln_eps
        positions = np.asarray(inp.positions, dtype=float)
        if positions.ndim != 2 or positions.shape != (inp.features.shape[0], 2) or not np.isfinite(positions).all():
            raise ValueError("every node needs a finite (lat, lon) coordinate")
        if inp.features.shape[1] != cfg.past_steps:
            raise ValueError(f"expected {cfg.past_steps} past steps, got {inp.features.shape[1]}")
        x = embed_time_series(inp.features, inp.past_times, w["ts_embed.w"], w["ts_embed.b"])
        if node_mask is not None:
            x = apply_mask_token(x, np.asarray(node_mask, bool)[:, None, None], w["mask_token"])
        att = cfg.encoder_attention
        for i in range(cfg.transformer_depth):
            x = temporal_block(x, _sub(w, f"temporal.{i}"), att, ctx, eps)
        x = x.transpose(1, 0, 2)
        if last_step_only:
            x = x[-1:]
        node_angles = rope_angles(normalize_coords(positions, cfg.bbox), cfg.dim_per_head, cfg.rope_base)
        if cfg.use_images:
            if inp.images is None or inp.patch_positions is None:
                raise ValueError("this model needs satellite images and patch positions")
            images = np.asarray(inp.images, dtype=float)
            expected = (cfg.past_steps, cfg.image_size, cfg.image_size, cfg.channels)
            if images.shape != expected:
                raise ShapeMismatchError(f"image stack {images.shape} does not match model {expected}")
            if last_step_only:
                images = images[-1:]
            sat = patchify_embed(np.moveaxis(images, 0, 2), cfg.patch_size, w["patch_embed.w"], w["patch_embed.b"])
            if patch_mask is not None:
                sat = apply_mask_token(sat, np.asarray(patch_mask, bool)[None, :, None], w["mask_token"])
            patch_angles = rope_angles(normalize_coords(inp.patch_positions, cfg.bbox),
                                       cfg.dim_per_head, cfg.rope_base)
            pix_mask = self._ring_masks(positions, inp.patch_positions)
            for i in range(cfg.transformer_depth):
                x = cross_block(x, sat, _sub(w, f"pixel_cross.{i}"), att, node_angles, patch_angles,
                                pix_mask, cfg.delta, ctx, eps)
        node_mask_rings = self._ring_masks(positions, positions)
        for i in range(cfg.transformer_depth):
            x = cross_block(x, x, _sub(w, f"node_cross.{i}"), att, node_angles, node_angles,
                            node_mask_rings, cfg.delta, ctx, eps)
        return x

    def decode(self, encoded: Tensor, clearsky_future, ctx: RunContext | None = None) -> Tensor:
        """Raw decoder outputs (N, H, Q) in normalised units."""
        cfg, w = self.cfg, self.weights
        ctx = ctx or RunContext()
        cs = np.asarray(clearsky_future, dtype=float)
        if cs.ndim != 2 or cs.shape[1] != cfg.horizon:
            raise ValueError(f"clear-sky horizon must be (N, {cfg.horizon}), got {cs.shape}")
        encoded = nd.as_tensor(encoded)
        if cs.shape[0] != encoded.shape[1]:
            raise ValueError(f"clear-sky rows {cs.shape[0]} for {encoded.shape[1]} nodes")
        last = encoded[-1]
        seed_state = linear(last, w["decoder.handoff.w"], w["decoder.handoff.b"])
        seed_state = seed_state.reshape(seed_state.shape[0], 1, cfg.decoder_dim)
        cs_emb = linear((cs / CLEARSKY_SCALE_WM2)[..., None], w["decoder.clearsky.w"], w["decoder.clearsky.b"])
        x = cs_emb + seed_state + w["decoder.lead"]
        att = cfg.decoder_attention
        for i in range(cfg.decoder_depth):
            x = temporal_block(x, _sub(w, f"decoder.block.{i}"), att, ctx, cfg.ln_eps)
        x = _ln(x, _sub(w, "decoder.norm"), cfg.ln_eps)
        heads = [geglu_mlp(x, _sub(w, f"head.{q}")) for q in range(cfg.output_heads)]
        return heads[0] if len(heads) == 1 else nd.concat(heads, axis=-1)

    def forward(self, inp: ModelInputs, node_mask=None, patch_mask=None,
                train: bool = False, seed: int | None = None) -> Tensor:
        ctx = RunContext(train, seed, self.cfg.dropout)
        encoded = self.encode(inp, node_mask, patch_mask, ctx, last_step_only=True)
        return self.decode(encoded, inp.clearsky_future, ctx)

    __call__ = forward

    def predict(self, inp: ModelInputs, node_mask=None) -> ForecastBatch:
        """Inference in kW/m^2: quantiles sorted ascending, clipped to [0, 1.5]."""
        raw = self.forward(inp, node_mask=node_mask, train=False).data * GHI_SCALE
        if raw.shape[-1] > 1:
            raw = np.sort(raw, axis=-1)
        values = np.clip(raw, *OUTPUT_CLIP)
        quantiles = (0.05, 0.5, 0.95) if self.cfg.output_heads == 3 else (0.5,)
        lead = inp.future_times if inp.future_times is not None else np.arange(self.cfg.horizon)
        return ForecastBatch(values, list(inp.node_ids), lead, quantiles)


# ------------------------------------------------------------- checkpoints

def save_checkpoint(path, cfg: ModelConfig, weights: dict, extra: dict | None = None) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "tensors": [{"name": k, "shape": list(v.shape), "dtype": "float64"} for k, v in weights.items()],
        "extra": extra or {},
    }
    arrays = {f"w/{k}": np.ascontiguousarray(v.data, dtype=np.float64) for k, v in weights.items()}
    arrays["header"] = np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Return ``(config, weights, extra)``; weights require gradients."""
    with np.load(path, allow_pickle=False) as z:
        if "header" not in z.files:
            raise ValueError(f"{path} is not a checkpoint (no header)")
        header = json.loads(z["header"].tobytes().decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        cfg = ModelConfig.from_dict(header["config"])
        weights = {}
        for entry in header["tensors"]:
            arr = np.array(z[f"w/{entry['name']}"], dtype=np.float64)
            if list(arr.shape) != entry["shape"]:
                raise ValueError(f"{path}: tensor {entry['name']} has shape {arr.shape}, header says {entry['shape']}")
            weights[entry["name"]] = Tensor(arr, requires_grad=True)
    check_weights(cfg, weights)
    if expect is not None and parameter_shapes(expect) != parameter_shapes(cfg):
        raise ShapeMismatchError(
            f"checkpoint signature [{cfg.data_signature()}] vs requested [{expect.data_signature()}]")
    return cfg, weights, header.get("extra", {})
