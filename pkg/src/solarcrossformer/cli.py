"""Command-line entry point: synth, validate, train, eval, forecast, gradcheck.

Failures print one line ``error: <category>: <message>`` to stderr and exit
nonzero. Config precedence: flags > ``--config`` file (YAML or JSON with
``scene``/``model``/``train`` sections) > built-in defaults. Every command that
writes to ``--out`` also writes the resolved config there.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from . import gradcheck
from .data import (
    DatasetError,
    Normalizer,
    SceneConfig,
    day_segments,
    load_dataset,
    make_windows,
    save_dataset,
    synth_generate,
    validate_dataset,
)
from .evaluation import (
    baseline_forecasts,
    model_forecasts,
    quantile_columns,
    report_for,
    write_points,
)
from .metrics import write_report
from .model import ModelConfig, ShapeMismatchError, SolarCrossFormer, load_checkpoint, save_checkpoint
from .plotting import plot_by_lead, plot_by_prediction_time, plot_training_log, plot_trajectories
from .solar import as_timestamps
from .training import TrainConfig, Trainer

EXIT_CODES = {"usage": 2, "config": 3, "dataset": 4, "checkpoint": 5, "unknown-node": 6, "runtime": 7,
              "gradcheck": 8}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# ------------------------------------------------------------------ config

def read_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError("config", f"config file {p} not found")
    try:
        text = p.read_text()
        cfg = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise CliError("config", f"cannot parse {p}: {exc}".replace("\n", " ")) from exc
    if cfg is None:
        return {}
    if not isinstance(cfg, dict):
        raise CliError("config", f"{p} must hold a mapping")
    return cfg


def _section(cfg: dict, name: str, cls) -> dict:
    sec = dict(cfg.get(name) or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(sec) - known)
    if unknown:
        raise CliError("config", f"unknown {name} keys: {', '.join(unknown)}")
    return sec


def _build(cls, values: dict, what: str):
    try:
        return cls.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise CliError("config", f"invalid {what} config: {exc}") from exc


def write_resolved(out: Path, resolved: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "resolved_config.yaml", "w") as fh:
        yaml.safe_dump(_plain(resolved), fh, sort_keys=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and obj == float("inf"):
        return "inf"
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _seed(args, cfg: dict, required: bool) -> int | None:
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None and required:
        raise CliError("config", f"{args.command} needs --seed (or 'seed' in the config file)")
    return None if seed is None else int(seed)


def _path(args, cfg: dict, name: str, required: bool = True):
    value = getattr(args, name, None) or cfg.get(name)
    if value is None and required:
        raise CliError("usage", f"{args.command} needs --{name}")
    return None if value is None else Path(value)


def _load(path: Path):
    try:
        return load_dataset(path)
    except (DatasetError, OSError) as exc:
        raise CliError("dataset", str(exc).replace("\n", " ")) from exc


def _load_model(args, cfg: dict, dataset):
    ckpt = _path(args, cfg, "checkpoint")
    if not ckpt.is_file():
        raise CliError("checkpoint", f"checkpoint {ckpt} not found")
    expect = None
    overrides = _section(cfg, "model", ModelConfig)
    try:
        mcfg, weights, extra = load_checkpoint(ckpt)
        if overrides:
            expect = _build(ModelConfig, {**mcfg.to_dict(), **overrides}, "model")
            load_checkpoint(ckpt, expect=expect)
    except ShapeMismatchError as exc:
        raise CliError("checkpoint", str(exc)) from exc
    except (ValueError, KeyError, OSError) as exc:
        raise CliError("checkpoint", f"{ckpt}: {exc}") from exc
    data_cfg = dict(mcfg.to_dict(), n_features=len(dataset.feature_names), use_images=dataset.images is not None)
    if dataset.images is not None:
        data_cfg.update(image_size=dataset.images.frames.shape[1], channels=dataset.images.frames.shape[3])
    wanted = ModelConfig.from_dict(data_cfg) if mcfg.use_images or dataset.images is None else None
    if wanted is None:
        # an image-free model can still run on a dataset that carries images
        wanted = ModelConfig.from_dict(dict(data_cfg, use_images=False, image_size=mcfg.image_size,
                                            channels=mcfg.channels))
    if wanted.data_signature() != mcfg.data_signature():
        raise CliError("checkpoint", f"checkpoint signature [{mcfg.data_signature()}] vs dataset "
                                     f"[{wanted.data_signature()}]")
    norm = extra.get("normalization") or dataset.normalization
    if norm is None:
        raise CliError("dataset", "no normalisation statistics in checkpoint or dataset manifest")
    return SolarCrossFormer(mcfg, weights), Normalizer.from_dict(norm), extra


def _mask_vector(dataset, spec) -> np.ndarray | None:
    if not spec:
        return None
    ids = [s.strip() for s in spec.split(",") if s.strip()] if isinstance(spec, str) else list(spec)
    try:
        idx = dataset.node_index(ids)
    except DatasetError as exc:
        raise CliError("unknown-node", str(exc)) from exc
    mask = np.zeros(len(dataset.node_ids), dtype=bool)
    mask[idx] = True
    return mask


def _out(args, cfg) -> Path:
    out = _path(args, cfg, "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _say(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg, flush=True)


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    cfg = read_config(args.config)
    scene = _section(cfg, "scene", SceneConfig)
    seed = _seed(args, cfg, required=True)
    scene["seed"] = seed
    for flag, key in (("days", "n_days"), ("nodes", "n_nodes"), ("image_size", "image_size"),
                      ("eval_days", "eval_days")):
        if getattr(args, flag) is not None:
            scene[key] = getattr(args, flag)
    scene_cfg = _build(SceneConfig, scene, "scene")
    out = _out(args, cfg)
    ds = synth_generate(scene_cfg)
    save_dataset(ds, out)
    write_resolved(out, {"command": "synth", "seed": seed, "out": str(out), "scene": scene_cfg.to_dict()})
    _say(args, f"wrote {len(ds.stations)} stations x {ds.n_steps} steps to {out}")
    return 0


def cmd_validate(args) -> int:
    cfg = read_config(args.config)
    path = _path(args, cfg, "dataset")
    problems = validate_dataset(path)
    for p in problems:
        print(p)
    if problems:
        raise CliError("dataset", f"{path}: {len(problems)} problem(s) found")
    _say(args, f"{path}: ok")
    return 0


def _train_configs(args, cfg: dict, dataset):
    seed = _seed(args, cfg, required=True)
    train = _section(cfg, "train", TrainConfig)
    model = _section(cfg, "model", ModelConfig)
    train["seed"] = seed
    if args.loss:
        train["loss_kind"] = args.loss
    if args.max_steps is not None:
        train["max_steps"] = args.max_steps
    tcfg = _build(TrainConfig, train, "train")
    model.setdefault("output_heads", tcfg.output_heads)
    model["n_features"] = len(dataset.feature_names)
    if args.no_images or dataset.images is None:
        if dataset.images is None and model.get("use_images") and not args.no_images:
            raise CliError("config", "model.use_images is set but the dataset has no images")
        model["use_images"] = False
    else:
        model.setdefault("image_size", dataset.images.frames.shape[1])
        model.setdefault("channels", dataset.images.frames.shape[3])
        _, h, _, c = dataset.images.frames.shape
        if (model["image_size"], model["channels"]) != (h, c):
            raise CliError("config", f"model images {model['image_size']}x{model['image_size']}x"
                                     f"{model['channels']} do not match dataset frames "
                                     f"{dataset.images.frames.shape[1:]}")
    model.setdefault("bbox", list(dataset.bbox))
    mcfg = _build(ModelConfig, model, "model")
    if mcfg.output_heads != tcfg.output_heads:
        raise CliError("config", f"loss {tcfg.loss_kind} needs {tcfg.output_heads} output heads, "
                                 f"model.output_heads is {mcfg.output_heads}")
    return seed, mcfg, tcfg


def cmd_train(args) -> int:
    cfg = read_config(args.config)
    dataset = _load(_path(args, cfg, "dataset"))
    seed, mcfg, tcfg = _train_configs(args, cfg, dataset)
    out = _out(args, cfg)
    write_resolved(out, {"command": "train", "seed": seed, "dataset": str(_path(args, cfg, "dataset")),
                         "out": str(out), "model": mcfg.to_dict(), "train": tcfg.to_dict()})
    splits = dataset.splits or {}
    train_seg = day_segments(splits["train"]) if splits.get("train") else None
    val_seg = day_segments(splits["val"]) if splits.get("val") else None
    train_w = make_windows(dataset, mcfg.past_steps, mcfg.horizon, 1, train_seg)
    val_w = make_windows(dataset, mcfg.past_steps, mcfg.horizon, 4, val_seg) if val_seg else []
    if not train_w:
        raise CliError("dataset", "training split is shorter than one window (past + horizon)")
    norm = Normalizer.from_dict(dataset.normalization) if dataset.normalization else Normalizer.fit(dataset, train_seg)
    log = out / "train_log.csv"
    if log.exists():
        log.unlink()
    model = SolarCrossFormer(mcfg, seed=seed)
    trainer = Trainer(model, train_w, norm, tcfg, val_w, log_path=log, checkpoint_dir=out / "checkpoints",
                      progress=None if args.quiet else print)
    try:
        trainer.fit()
    except FloatingPointError as exc:
        raise CliError("runtime", str(exc)) from exc
    trainer.restore_best()
    extra = {"normalization": norm.to_dict(), "train": tcfg.to_dict(), "best_update": trainer.state.best_update,
             "updates": trainer.state.update}
    save_checkpoint(out / "model.npz", mcfg, model.weights, extra)
    if log.exists() and log.stat().st_size:
        plot_training_log(log, out / "training_curve.png")
    _say(args, f"saved {out / 'model.npz'} (best update {trainer.state.best_update}, "
               f"{trainer.state.update} updates)")
    return 0


def cmd_eval(args) -> int:
    cfg = read_config(args.config)
    dataset = _load(_path(args, cfg, "dataset"))
    mask = _mask_vector(dataset, args.mask_nodes or cfg.get("mask_nodes"))
    model, norm, _ = _load_model(args, cfg, dataset)
    out = _out(args, cfg)
    split = args.split
    ranges = (dataset.splits or {}).get(split)
    segments = day_segments(ranges) if ranges else None
    if ranges is not None and not ranges:
        raise CliError("dataset", f"split {split!r} is empty")
    windows = make_windows(dataset, model.cfg.past_steps, model.cfg.horizon, args.stride, segments)
    if not windows:
        raise CliError("dataset", f"split {split!r} is shorter than one window")
    write_resolved(out, {"command": "eval", "dataset": str(_path(args, cfg, "dataset")),
                         "checkpoint": str(_path(args, cfg, "checkpoint")), "split": split, "stride": args.stride,
                         "mask_nodes": [] if mask is None else list(np.asarray(dataset.node_ids)[mask]),
                         "out": str(out), "model": model.cfg.to_dict()})
    levels = (0.05, 0.5, 0.95) if model.cfg.output_heads == 3 else (0.5,)
    truth, fc, issues = model_forecasts(model, windows, norm, mask, progress=None if args.quiet else print)
    write_points(out / "points.csv", truth, fc, dataset.node_ids, issues, levels)
    report = report_for(truth, fc, dataset.node_ids, issues, levels)
    write_report(report, out)
    by_lead = {"model": report.by_lead["night_excluded"]}
    by_time = {"model": report.by_prediction_time["night_excluded"]}
    if not args.no_baselines:
        for kind in ("clearsky", "smart_persistence"):
            by, bf, bi = baseline_forecasts(windows, kind)
            rep = report_for(by, bf, dataset.node_ids, bi, (0.5,))
            write_report(rep, out / f"baseline_{kind}")
            by_lead[kind] = rep.by_lead["night_excluded"]
            by_time[kind] = rep.by_prediction_time["night_excluded"]
    for metric in ("nrmse", "nmae"):
        plot_by_lead(by_lead, out / f"{metric}_by_lead.png", metric)
        plot_by_prediction_time(by_time, out / f"{metric}_by_prediction_time.png", metric)
    overall = report.overall["night_excluded"]
    _say(args, "night-excluded overall: " + ", ".join(f"{k}={100 * v:.2f}%" for k, v in overall.items()))
    return 0


def cmd_forecast(args) -> int:
    cfg = read_config(args.config)
    dataset = _load(_path(args, cfg, "dataset"))
    mask = _mask_vector(dataset, args.mask_nodes or cfg.get("mask_nodes"))
    start = args.start or cfg.get("start")
    if start is None:
        raise CliError("usage", "forecast needs --start <timestamp> (forecast issue time, UTC)")
    try:
        t0 = as_timestamps(start)
    except ValueError as exc:
        raise CliError("usage", f"bad --start: {exc}") from exc
    model, norm, _ = _load_model(args, cfg, dataset)
    hits = np.nonzero(dataset.timestamps == t0)[0]
    if not len(hits):
        raise CliError("dataset", f"{t0} is not a dataset timestamp")
    issue = int(hits[0])
    T, H = model.cfg.past_steps, model.cfg.horizon
    if issue < T or issue + H > dataset.n_steps:
        raise CliError("dataset", f"{t0} needs {T} past and {H} future steps inside the dataset")
    out = _out(args, cfg)
    write_resolved(out, {"command": "forecast", "start": str(t0), "dataset": str(_path(args, cfg, "dataset")),
                         "checkpoint": str(_path(args, cfg, "checkpoint")), "out": str(out),
                         "mask_nodes": [] if mask is None else list(np.asarray(dataset.node_ids)[mask])})
    windows = make_windows(dataset, T, H, 1, [(issue - T, issue + H)])
    window = windows[0]
    fc = model.predict(norm.model_inputs(window, None, model.cfg.patch_size, model.cfg.use_images), node_mask=mask)
    cols = quantile_columns(fc.quantiles)
    traj = {}
    for i, node in enumerate(dataset.node_ids):
        with open(out / f"forecast_{node}.csv", "w", newline="") as fh:
            fh.write(",".join(["timestamp", *cols]) + "\n")
            for t, row in zip(window.future_times, fc.values[i]):
                fh.write(",".join([str(t), *(repr(float(v)) for v in row)]) + "\n")
        traj[node] = fc.values[i]
    truth = {node: window.target[i] for i, node in enumerate(dataset.node_ids)}
    plot_trajectories(window.future_times, traj, out / "forecast.png", truth)
    _say(args, f"wrote {len(dataset.node_ids)} forecast files ({H} steps, {len(cols)} quantiles) to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    ok = gradcheck.run_all(seed=args.seed or 0, report=print if not args.quiet else (lambda m: None))
    if not ok:
        raise CliError("gradcheck", "finite-difference check failed")
    return 0


# ------------------------------------------------------------------ parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="solarcrossformer", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, dataset=True, checkpoint=False, out=True):
        sp.add_argument("--config", help="YAML/JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--quiet", action="store_true")
        if dataset:
            sp.add_argument("--dataset", help="dataset directory")
        if checkpoint:
            sp.add_argument("--checkpoint", help="model checkpoint (.npz)")
        if out:
            sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("synth", help="generate a synthetic dataset directory")
    common(sp, dataset=False)
    sp.add_argument("--days", type=int)
    sp.add_argument("--nodes", type=int)
    sp.add_argument("--image-size", type=int, dest="image_size")
    sp.add_argument("--eval-days", type=int, dest="eval_days")

    sp = sub.add_parser("validate", help="check a dataset directory")
    common(sp, out=False)

    sp = sub.add_parser("train", help="train a model, write checkpoints and a training log")
    common(sp)
    sp.add_argument("--loss", choices=("mse", "pinball"))
    sp.add_argument("--no-images", action="store_true", dest="no_images")
    sp.add_argument("--max-steps", type=int, dest="max_steps")

    sp = sub.add_parser("eval", help="metrics report for a checkpoint over a dataset split")
    common(sp, checkpoint=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--stride", type=int, default=1, help="steps between forecast issue times")
    sp.add_argument("--mask-nodes", dest="mask_nodes", help="comma-separated node ids to mask fully")
    sp.add_argument("--no-baselines", action="store_true", dest="no_baselines")

    sp = sub.add_parser("forecast", help="per-node quantile trajectories from one issue time")
    common(sp, checkpoint=True)
    sp.add_argument("--start", help="issue timestamp, e.g. 2024-06-05T06:00")
    sp.add_argument("--mask-nodes", dest="mask_nodes")

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--quiet", action="store_true")
    return p


COMMANDS = {"synth": cmd_synth, "validate": cmd_validate, "train": cmd_train, "eval": cmd_eval,
            "forecast": cmd_forecast, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc.category}: {str(exc).splitlines()[0] if str(exc) else ''}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: runtime: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}",
              file=sys.stderr)
        return EXIT_CODES["runtime"]


if __name__ == "__main__":
    sys.exit(main())
