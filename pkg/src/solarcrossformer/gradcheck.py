"""Finite-difference gradient suites for the tensor ops, the attention/block
primitives and a tiny end-to-end model."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import ndiff as nd
from .attention import AttentionConfig, build_ring_masks, head_major, layer_norm, multi_head_attention, rope_apply
from .model import (
    ModelConfig,
    ModelInputs,
    RunContext,
    SolarCrossFormer,
    _sub,
    cross_block,
    geglu_mlp,
    init_weights,
    temporal_block,
)
from .ndiff import Tensor
from .training import mse_loss, pinball_loss

PRIMITIVE_TOL = 1e-4
MODEL_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.deviation <= self.tolerance


def _rand(rng, *shape, lo=-2.0, hi=2.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _projected(fn, proj):
    # random linear functional keeps shift-invariant ops (softmax, layer norm) non-trivial
    return lambda x: nd.tsum(fn(x) * proj)


def op_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    b = rng.uniform(-2, 2, (3, 4))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    m = rng.uniform(-2, 2, (4, 5))
    cases = {
        "add": (lambda x: x + b, (3, 4)),
        "sub": (lambda x: b - x, (3, 4)),
        "mul": (lambda x: x * b, (3, 4)),
        "div": (lambda x: b / (x * x + 1.0), (3, 4)),
        "div_denominator": (lambda x: x / pos, (3, 4)),
        "power": (lambda x: nd.power(x * x + 0.5, 1.5), (3, 4)),
        "exp": (nd.exp, (3, 4)),
        "sqrt": (lambda x: nd.sqrt(x * x + 0.1), (3, 4)),
        "sin": (nd.sin, (3, 4)),
        "cos": (nd.cos, (3, 4)),
        "maximum": (lambda x: nd.maximum(x, b), (3, 4)),
        "gelu": (nd.gelu, (3, 4)),
        "dropout": (lambda x: nd.dropout(x, 0.3, (seed, 1), True), (3, 4)),
        "matmul": (lambda x: x @ m, (3, 4)),
        "batched_matmul": (lambda x: x @ x.swap_last(), (2, 3, 4)),
        "sum_axis": (lambda x: x.sum(axis=1), (3, 4)),
        "mean": (lambda x: x.mean(axis=0, keepdims=True), (3, 4)),
        "var": (lambda x: x.var(axis=-1), (3, 4)),
        "softmax": (lambda x: nd.softmax(x, axis=-1), (3, 4)),
        "reshape": (lambda x: x.reshape((4, 3)), (3, 4)),
        "transpose": (lambda x: x.transpose((1, 0)), (3, 4)),
        "concat": (lambda x: nd.concat([x, x * 2.0], axis=0), (3, 4)),
        "slice": (lambda x: x[1:, ::2], (3, 4)),
        "gather": (lambda x: x[np.array([0, 2, 2])], (3, 4)),
        "broadcast_to": (lambda x: nd.broadcast_to(x, (2, 3, 4)), (3, 4)),
    }
    out = []
    for name, (fn, shape) in cases.items():
        x = _rand(rng, *shape)
        proj = rng.normal(size=fn(x).shape)
        out.append(CheckResult(f"op:{name}", nd.finite_diff_check(_projected(fn, proj), x), PRIMITIVE_TOL))
    return out


def block_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    d, heads, dh = 8, 4, 4
    att = AttentionConfig(d, heads, dh, 0.0)
    out = []

    def check(name, fn, shape):
        x = _rand(rng, *shape)
        proj = rng.normal(size=fn(x).shape)
        out.append(CheckResult(f"block:{name}", nd.finite_diff_check(_projected(fn, proj), x), PRIMITIVE_TOL))

    gamma, beta = rng.uniform(0.5, 1.5, d), rng.uniform(-0.5, 0.5, d)
    check("layer_norm", lambda x: layer_norm(x, gamma, beta), (3, d))
    weights = {k: rng.uniform(-0.5, 0.5, (d, heads * dh)) for k in ("wq", "wk", "wv")}
    weights["wo"] = rng.uniform(-0.5, 0.5, (heads * dh, d))
    ctx_in = rng.uniform(-2, 2, (5, d))
    check("self_attention", lambda x: multi_head_attention(x, x, x, att, weights), (3, d))
    angles = rng.uniform(0, 6, (3, dh))
    check("rope", lambda x: rope_apply(x, angles), (2, 3, dh))
    pos_q = np.array([[46.5, 7.0], [46.6, 7.3], [47.2, 8.5]])
    pos_k = np.array([[46.5, 7.1], [46.9, 7.5], [46.1, 9.0], [47.0, 6.2], [46.5, 7.0]])
    mask = head_major(build_ring_masks(pos_q, pos_k))
    k_angles = rng.uniform(0, 6, (5, dh))
    check("masked_rope_cross_attention",
          lambda x: multi_head_attention(x, ctx_in, ctx_in, att, weights, angles, k_angles, mask), (3, d))
    check("masked_attention_keys",
          lambda x: multi_head_attention(ctx_in[:3], x, x, att, weights, angles, k_angles, mask), (5, d))
    mlp = {"w1": rng.uniform(-0.5, 0.5, (d, 2 * 3 * d)), "b1": rng.uniform(-0.1, 0.1, 2 * 3 * d),
           "w2": rng.uniform(-0.5, 0.5, (3 * d, d)), "b2": rng.uniform(-0.1, 0.1, d)}
    check("geglu_mlp", lambda x: geglu_mlp(x, mlp), (3, d))

    cfg = ModelConfig(n_features=1, embed_dim=d, transformer_depth=1, transformer_heads=heads, dim_per_head=dh,
                      decoder_dim=d, decoder_depth=1, decoder_heads=heads, decoder_dim_per_head=dh,
                      image_size=4, patch_size=2, past_steps=4, horizon=4, dropout=0.0)
    w = {k: v.data for k, v in init_weights(cfg, seed).items()}
    check("temporal_block", lambda x: temporal_block(x, _sub(w, "temporal.0"), att), (3, 4, d))
    ring = build_ring_masks(pos_q, pos_k)
    ctx_seq = rng.uniform(-2, 2, (2, 5, d))
    check("cross_block", lambda x: cross_block(x, ctx_seq, _sub(w, "node_cross.0"), att, angles, k_angles, ring),
          (2, 3, d))
    truth = rng.uniform(0, 1, (2, 3))
    check("pinball_loss", lambda x: pinball_loss(x, truth, (0.05, 0.5, 0.95)), (2, 3, 3))
    check("mse_loss", lambda x: mse_loss(x, truth), (2, 3, 1))
    return out


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(n_features=3, embed_dim=8, transformer_depth=1, transformer_heads=4, dim_per_head=4,
                mlp_ratio=2, dropout=0.1, decoder_dim=8, decoder_depth=1, decoder_heads=4,
                decoder_dim_per_head=4, output_heads=3, patch_size=2, image_size=4, channels=4,
                past_steps=4, horizon=4)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_inputs(cfg: ModelConfig, seed: int = 0, n_nodes: int = 2) -> ModelInputs:
    from .model import patch_centers
    rng = np.random.default_rng(seed)
    lon_min, lat_min, lon_max, lat_max = cfg.bbox
    positions = np.stack([rng.uniform(lat_min, lat_max, n_nodes), rng.uniform(lon_min, lon_max, n_nodes)], -1)
    t0 = np.datetime64("2024-06-01T08:00", "m")
    step = np.timedelta64(15, "m")
    return ModelInputs(
        features=rng.uniform(0, 1, (n_nodes, cfg.past_steps, cfg.n_features)),
        past_times=t0 + np.arange(cfg.past_steps) * step,
        positions=positions,
        clearsky_future=rng.uniform(0, 1000, (n_nodes, cfg.horizon)),
        images=rng.uniform(0, 1, (cfg.past_steps, cfg.image_size, cfg.image_size, cfg.channels))
        if cfg.use_images else None,
        patch_positions=patch_centers(cfg.bbox, cfg.image_size, cfg.patch_size) if cfg.use_images else None,
        node_ids=[f"N{i}" for i in range(n_nodes)],
        future_times=t0 + (cfg.past_steps + np.arange(cfg.horizon)) * step,
    )


def model_suite(seed: int = 0, entries_per_tensor: int = 6) -> list[CheckResult]:
    """Every weight tensor of the tiny model (seeded dropout on, one node masked)."""
    cfg = tiny_model_config()
    model = SolarCrossFormer(cfg, seed=seed)
    inp = tiny_inputs(cfg, seed)
    truth = np.random.default_rng(seed + 1).uniform(0, 1, (2, cfg.horizon))
    node_mask = np.array([False, True])
    patch_mask = np.array([True, False, False, True])

    def loss(_):
        pred = model.forward(inp, node_mask=node_mask, patch_mask=patch_mask, train=True, seed=seed)
        return pinball_loss(pred, truth, (0.05, 0.5, 0.95))

    out = []
    for name, w in model.weights.items():
        dev = nd.finite_diff_check(loss, w, max_entries=entries_per_tensor, seed=seed)
        out.append(CheckResult(f"model:{name}", dev, MODEL_TOL))
    return out


def run_all(seed: int = 0, report=print) -> bool:
    start = time.perf_counter()
    results = op_suite(seed) + block_suite(seed) + model_suite(seed)
    for r in results:
        report(f"{'PASS' if r.passed else 'FAIL'} {r.name} deviation={r.deviation:.2e} tol={r.tolerance:.0e}")
    ok = all(r.passed for r in results)
    report(f"{'PASS' if ok else 'FAIL'} {len(results)} checks in {time.perf_counter() - start:.1f}s")
    return ok


# keep RunContext importable from here for callers building custom checks
__all__ = ["CheckResult", "op_suite", "block_suite", "model_suite", "run_all", "tiny_model_config",
           "tiny_inputs", "RunContext"]
