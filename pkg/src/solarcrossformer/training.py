"""Losses, dynamic node/patch masking, Adam with cosine warm restarts, gradient
accumulation, early stopping and checkpoint selection."""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import ndiff as nd
from .model import ModelConfig, ModelInputs, SolarCrossFormer, save_checkpoint
from .ndiff import Tensor


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class TrainConfig:
    loss_kind: str = "pinball"
    quantile_levels: tuple = (0.05, 0.5, 0.95)
    nodes_per_batch: tuple = (10, 16)
    node_mask_ratio: float = 0.15
    image_mask_ratio: float = 0.95
    batch_size: int = 1                 # windows per micro-batch
    accumulation_steps: int = 4         # micro-batches per optimizer update
    optimizer: str = "adam"             # "adam" or "sgd" (plain gradient step)
    base_lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    restart_period: int = 500
    restart_mult: int = 2
    min_lr: float | None = None         # defaults to base_lr / 100
    grad_clip: float | None = None      # global-norm clip, off by default
    max_steps: int = 1000               # optimizer updates
    eval_every: int = 50
    patience: int = 10
    max_val_windows: int = 32
    seed: int = 0

    def __post_init__(self):
        self.quantile_levels = tuple(float(q) for q in self.quantile_levels)
        self.nodes_per_batch = tuple(int(n) for n in self.nodes_per_batch)
        if self.loss_kind not in ("mse", "pinball"):
            raise ValueError(f"loss_kind must be 'mse' or 'pinball', got {self.loss_kind!r}")
        check_levels(self.quantile_levels)
        for name in ("node_mask_ratio", "image_mask_ratio"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        lo, hi = self.nodes_per_batch
        if not 1 <= lo <= hi:
            raise ValueError(f"nodes_per_batch range {self.nodes_per_batch} is invalid")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        for name in ("batch_size", "accumulation_steps", "restart_period", "eval_every", "patience"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_steps < 0 or self.base_lr <= 0:
            raise ValueError("max_steps must be >= 0 and base_lr > 0")

    @property
    def output_heads(self) -> int:
        return 1 if self.loss_kind == "mse" else len(self.quantile_levels)

    @property
    def min_learning_rate(self) -> float:
        return self.base_lr / 100.0 if self.min_lr is None else self.min_lr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quantile_levels"] = list(self.quantile_levels)
        d["nodes_per_batch"] = list(self.nodes_per_batch)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


# ------------------------------------------------------------------ losses

def check_levels(levels) -> None:
    lv = np.asarray(levels, dtype=float)
    if lv.ndim != 1 or lv.size == 0:
        raise ValueError("quantile levels must be a non-empty sequence")
    if np.any(lv <= 0) or np.any(lv >= 1) or np.any(np.diff(lv) <= 0):
        raise ValueError(f"quantile levels must be strictly increasing in (0, 1), got {list(levels)}")


def pinball_loss(pred, truth, levels) -> Tensor:
    """Mean over (n, h, q) of the quantile loss."""
    check_levels(levels)
    pred = nd.as_tensor(pred)
    truth = np.asarray(truth, dtype=float)
    if pred.shape[-1] != len(levels):
        raise ValueError(f"{pred.shape[-1]} prediction heads for {len(levels)} levels")
    if pred.shape[:-1] != truth.shape:
        raise ValueError(f"prediction {pred.shape} does not match truth {truth.shape}")
    q = np.asarray(levels, dtype=float)
    err = nd.as_tensor(truth[..., None]) - pred
    return nd.maximum(err * q, err * (q - 1.0)).mean()


def mse_loss(pred, truth) -> Tensor:
    pred = nd.as_tensor(pred)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape + (1,):
        raise ValueError(f"prediction {pred.shape} does not match truth {truth.shape} + (1,)")
    r = pred - truth[..., None]
    return (r * r).mean()


def forecast_loss(pred, truth, cfg: TrainConfig) -> Tensor:
    if cfg.loss_kind == "mse":
        return mse_loss(pred, truth)
    return pinball_loss(pred, truth, cfg.quantile_levels)


# ----------------------------------------------------------------- masking

def draw_dynamic_masks(node_count: int, rng: np.random.Generator, cfg: TrainConfig,
                       n_patches: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Boolean node and patch masks with round-half-up counts, uniform without replacement."""
    if node_count < 1:
        raise ValueError("node_count must be >= 1")
    node_mask = np.zeros(node_count, dtype=bool)
    node_mask[rng.choice(node_count, round_half_up(cfg.node_mask_ratio * node_count), replace=False)] = True
    patch_mask = np.zeros(n_patches, dtype=bool)
    if n_patches:
        patch_mask[rng.choice(n_patches, round_half_up(cfg.image_mask_ratio * n_patches), replace=False)] = True
    return node_mask, patch_mask


# ---------------------------------------------------------------- schedule

def scheduled_lr(update: int, cfg: TrainConfig) -> float:
    """Cosine annealing with warm restarts, period doubling (``restart_mult``) each cycle."""
    period, start = cfg.restart_period, 0
    while update >= start + period:
        start += period
        period *= cfg.restart_mult
    frac = (update - start) / period
    lo = cfg.min_learning_rate
    return lo + 0.5 * (cfg.base_lr - lo) * (1.0 + math.cos(math.pi * frac))


# ------------------------------------------------------------------ state

@dataclass
class TrainState:
    update: int = 0                     # optimizer updates applied
    micro: int = 0                      # micro-batches accumulated toward the next update
    moments: dict = field(default_factory=dict)     # name -> (m, v)
    best_val: float = math.inf
    best_update: int = -1
    since_improvement: int = 0
    history: list = field(default_factory=list)     # (update, val loss)
    rng_state: dict | None = None
    aborted: int = 0

    @classmethod
    def fresh(cls, seed: int) -> "TrainState":
        return cls(rng_state=np.random.default_rng(seed).bit_generator.state)

    def rng(self) -> np.random.Generator:
        g = np.random.default_rng()
        g.bit_generator.state = self.rng_state
        return g

    def to_arrays(self) -> dict:
        """Flatten into npz-storable arrays (scalars via a JSON-able header dict)."""
        header = {k: getattr(self, k) for k in ("update", "micro", "best_val", "best_update",
                                                 "since_improvement", "aborted")}
        header["best_val"] = None if math.isinf(self.best_val) else self.best_val
        header["history"] = [list(h) for h in self.history]
        header["rng_state"] = self.rng_state
        arrays = {"state_header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
        for name, (m, v) in self.moments.items():
            arrays[f"m/{name}"] = m
            arrays[f"v/{name}"] = v
        return arrays

    @classmethod
    def from_arrays(cls, arrays) -> "TrainState":
        header = json.loads(bytes(arrays["state_header"]).decode())
        best = header.pop("best_val")
        st = cls(**{k: header[k] for k in ("update", "micro", "best_update", "since_improvement", "aborted")})
        st.best_val = math.inf if best is None else best
        st.history = [tuple(h) for h in header["history"]]
        st.rng_state = header["rng_state"]
        for key in arrays:
            if key.startswith("m/"):
                name = key[2:]
                st.moments[name] = (np.array(arrays[key]), np.array(arrays[f"v/{name}"]))
        return st


def save_train_state(path, state: TrainState, weights: dict, cfg: ModelConfig) -> None:
    """Resumable snapshot: weights (with pending accumulated grads) plus optimizer state."""
    arrays = state.to_arrays()
    for k, w in weights.items():
        arrays[f"w/{k}"] = w.data
        arrays[f"g/{k}"] = w.grad if w.grad is not None else np.zeros_like(w.data)
    arrays["model_config"] = np.frombuffer(json.dumps(cfg.to_dict()).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_train_state(path) -> tuple[TrainState, dict, ModelConfig]:
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    cfg = ModelConfig.from_dict(json.loads(bytes(arrays["model_config"]).decode()))
    weights = {}
    for key in arrays:
        if key.startswith("w/"):
            name = key[2:]
            t = Tensor(np.array(arrays[key]), requires_grad=True)
            t.grad = np.array(arrays[f"g/{name}"])
            weights[name] = t
    return TrainState.from_arrays(arrays), weights, cfg


# -------------------------------------------------------------- optimizer

def apply_update(weights: dict, state: TrainState, cfg: TrainConfig) -> float:
    """One optimizer step on the accumulated (already averaged) gradients; returns the lr used."""
    lr = scheduled_lr(state.update, cfg)
    grads = {k: w.grad for k, w in weights.items()}
    if cfg.grad_clip is not None:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > cfg.grad_clip:
            grads = {k: g * (cfg.grad_clip / norm) for k, g in grads.items()}
    if cfg.optimizer == "sgd":
        for k, w in weights.items():
            w.data = w.data - lr * grads[k]
    else:
        t = state.update + 1
        c1 = 1.0 - cfg.beta1 ** t
        c2 = 1.0 - cfg.beta2 ** t
        for k, w in weights.items():
            g = grads[k]
            m, v = state.moments.get(k, (np.zeros_like(g), np.zeros_like(g)))
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
            state.moments[k] = (m, v)
            w.data = w.data - lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    for w in weights.values():
        w.zero_grad()
    state.update += 1
    state.micro = 0
    return lr


@dataclass
class StepResult:
    loss: float
    updated: bool
    lr: float | None = None
    aborted: bool = False
    reason: str = ""


def train_step(loss_fn, state: TrainState, cfg: TrainConfig, weights: dict) -> StepResult:
    """Accumulate one micro-batch's gradient; update every ``accumulation_steps`` micro-batches.

    ``loss_fn(rng)`` builds the scalar micro-batch loss Tensor, drawing any
    randomness from ``rng``. Each micro-batch gradient is scaled by
    ``1/accumulation_steps`` so an update applies the averaged gradient. A
    non-finite loss aborts the step and leaves state and weights untouched.
    """
    rng = state.rng()
    saved = {k: None if w.grad is None else w.grad.copy() for k, w in weights.items()}
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            loss = loss_fn(rng)
        value = loss.item()
        if not math.isfinite(value):
            raise FloatingPointError(f"loss is {value}")
        (loss * (1.0 / cfg.accumulation_steps)).backward()
    except (ValueError, FloatingPointError) as exc:
        for k, w in weights.items():
            w.grad = saved[k]
        state.aborted += 1
        return StepResult(math.nan, False, aborted=True, reason=str(exc))
    state.rng_state = rng.bit_generator.state
    state.micro += 1
    if state.micro >= cfg.accumulation_steps:
        lr = apply_update(weights, state, cfg)
        return StepResult(value, True, lr)
    return StepResult(value, False)


# ------------------------------------------------------- checkpoint choice

def select_checkpoint(history) -> int:
    """Index (0-based) into ``history`` of the minimum validation loss, first on ties."""
    if not history:
        raise ValueError("empty validation history")
    losses = [h[1] if isinstance(h, (tuple, list)) else h for h in history]
    return int(np.argmin(losses))


def should_stop(history, patience: int) -> bool:
    """True once ``patience`` evaluations have passed without beating the best."""
    if not history:
        return False
    losses = [h[1] if isinstance(h, (tuple, list)) else h for h in history]
    return len(losses) - 1 - select_checkpoint(losses) >= patience


# ----------------------------------------------------------------- driver

class Trainer:
    """Windowed training on a Dataset with node sampling and dynamic masks."""

    def __init__(self, model: SolarCrossFormer, train_windows, normalizer, cfg: TrainConfig,
                 val_windows=(), log_path=None, checkpoint_dir=None, state: TrainState | None = None,
                 progress=None):
        if not train_windows:
            raise ValueError("no training windows")
        if model.cfg.output_heads != cfg.output_heads:
            raise ValueError(f"model has {model.cfg.output_heads} output heads, loss {cfg.loss_kind!r} "
                             f"needs {cfg.output_heads}")
        self.model = model
        self.train_windows = list(train_windows)
        self.val_windows = _spread(list(val_windows), cfg.max_val_windows)
        self.normalizer = normalizer
        self.cfg = cfg
        self.state = state or TrainState.fresh(cfg.seed)
        self.log_path = Path(log_path) if log_path else None
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.best_weights = None
        self.progress = progress

    def _inputs(self, window, node_idx=None) -> ModelInputs:
        m = self.model.cfg
        return self.normalizer.model_inputs(window, node_idx, m.patch_size, m.use_images)

    def micro_batch_loss(self, rng: np.random.Generator) -> Tensor:
        m, cfg = self.model.cfg, self.cfg
        total = None
        for _ in range(cfg.batch_size):
            window = self.train_windows[int(rng.integers(len(self.train_windows)))]
            n_all = window.past_features.shape[0]
            lo, hi = cfg.nodes_per_batch
            count = int(rng.integers(min(lo, n_all), min(hi, n_all) + 1))
            node_idx = np.sort(rng.choice(n_all, count, replace=False))
            node_mask, patch_mask = draw_dynamic_masks(count, rng, cfg, m.n_patches if m.use_images else 0)
            seed = int(rng.integers(2 ** 31))
            inp = self._inputs(window, node_idx)
            pred = self.model.forward(inp, node_mask=node_mask,
                                      patch_mask=patch_mask if m.use_images else None, train=True, seed=seed)
            target = window.target[node_idx] / self.normalizer.ghi_scale
            loss = forecast_loss(pred, target, cfg)
            total = loss if total is None else total + loss
        return total * (1.0 / cfg.batch_size)

    def validation_loss(self) -> float:
        if not self.val_windows:
            return math.nan
        losses = []
        for window in self.val_windows:
            pred = self.model.forward(self._inputs(window), train=False)
            losses.append(forecast_loss(pred, window.target / self.normalizer.ghi_scale, self.cfg).item())
        return float(np.mean(losses))

    def _log(self, row) -> None:
        if self.log_path is None:
            return
        new = not self.log_path.exists()
        with open(self.log_path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(["step", "lr", "train_loss", "val_loss"])
            writer.writerow(row)

    def _snapshot(self) -> dict:
        return {k: w.data.copy() for k, w in self.model.weights.items()}

    def fit(self) -> TrainState:
        cfg, st = self.cfg, self.state
        running = []
        while st.update < cfg.max_steps:
            res = train_step(self.micro_batch_loss, st, cfg, self.model.weights)
            if res.aborted:
                if self.progress:
                    self.progress(f"step aborted: {res.reason}")
                if st.aborted > 10 * cfg.accumulation_steps:
                    raise FloatingPointError(f"too many non-finite steps ({st.aborted}): {res.reason}")
                continue
            running.append(res.loss)
            if not res.updated:
                continue
            train_loss = float(np.mean(running))
            running = []
            val = ""
            if self.val_windows and (st.update % cfg.eval_every == 0 or st.update == cfg.max_steps):
                val = self.validation_loss()
                st.history.append((st.update, val))
                if val < st.best_val:
                    st.best_val, st.best_update, st.since_improvement = val, st.update, 0
                    self.best_weights = self._snapshot()
                    if self.checkpoint_dir is not None:
                        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
                        extra = {"update": st.update, "val_loss": val, "normalization": self.normalizer.to_dict(),
                                 "train": cfg.to_dict()}
                        save_checkpoint(self.checkpoint_dir / f"step{st.update:06d}.npz", self.model.cfg,
                                        self.model.weights, extra)
                        save_checkpoint(self.checkpoint_dir / "best.npz", self.model.cfg, self.model.weights, extra)
                else:
                    st.since_improvement += 1
            self._log([st.update, repr(res.lr), repr(train_loss), "" if val == "" else repr(val)])
            if self.progress:
                self.progress(f"update {st.update} lr {res.lr:.2e} train {train_loss:.5f}"
                              + ("" if val == "" else f" val {val:.5f}"))
            if st.history and should_stop(st.history, cfg.patience):
                break
        return st

    def restore_best(self) -> None:
        if self.best_weights is not None:
            for k, v in self.best_weights.items():
                self.model.weights[k].data = v.copy()


def _spread(items: list, limit: int) -> list:
    if len(items) <= limit:
        return items
    idx = np.linspace(0, len(items) - 1, limit).round().astype(int)
    return [items[i] for i in idx]


def clone_weights(weights: dict) -> dict:
    return {k: Tensor(w.data.copy(), requires_grad=True) for k, w in weights.items()}


def deep_copy_state(state: TrainState) -> TrainState:
    return copy.deepcopy(state)
