"""Station/image datasets, the synthetic cloud-advection scene, windowing and
normalisation, plus the on-disk dataset directory format.

Directory layout::

    manifest.json            nodes, bbox, time axis, features, image grid,
                             normalisation stats, day splits
    stations/<node_id>.csv   timestamp,<feature columns>   (GHI in kW/m^2 first)
    images/frames.bin        float64, row-major (frame, row, col, channel)
    images/index.csv         frame,timestamp
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .model import GHI_SCALE, SWISS_BBOX, ModelInputs, patch_centers
from .solar import STEP_MINUTES, as_timestamps, clearsky_ghi, solar_zenith

DATASET_FORMAT = "solarcrossformer-dataset"
DATASET_VERSION = 1
STEPS_PER_DAY = 24 * 60 // STEP_MINUTES
KM_PER_DEG_LAT = 110.57
MAPE_FLOOR = 0.1  # kW/m^2
DEFAULT_FEATURES = ("ghi", "temperature", "humidity")


class DatasetError(ValueError):
    pass


@dataclass
class StationSeries:
    node_id: str
    latitude: float
    longitude: float
    timestamps: np.ndarray      # (L,) datetime64[m]
    features: np.ndarray        # (L, f); column 0 is GHI in kW/m^2
    altitude: float = 0.0

    @property
    def position(self) -> tuple[float, float]:
        return (self.latitude, self.longitude)


@dataclass
class ImageSequence:
    timestamps: np.ndarray      # (L,)
    frames: np.ndarray          # (L, h, w, c) in [0, 1]
    bbox: tuple                 # lon_min, lat_min, lon_max, lat_max

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Latitudes of rows (north first) and longitudes of columns."""
        h, w = self.frames.shape[1:3]
        lon_min, lat_min, lon_max, lat_max = self.bbox
        lat = lat_max - (np.arange(h) + 0.5) * (lat_max - lat_min) / h
        lon = lon_min + (np.arange(w) + 0.5) * (lon_max - lon_min) / w
        return lat, lon

    def patch_positions(self, patch_size: int) -> np.ndarray:
        return patch_centers(self.bbox, self.frames.shape[1], patch_size)


@dataclass
class Dataset:
    stations: list[StationSeries]
    images: ImageSequence | None
    bbox: tuple = SWISS_BBOX
    feature_names: tuple = DEFAULT_FEATURES
    splits: dict = field(default_factory=dict)
    normalization: dict | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self._cache: dict = {}

    @property
    def node_ids(self) -> list[str]:
        return [s.node_id for s in self.stations]

    @property
    def timestamps(self) -> np.ndarray:
        return self.stations[0].timestamps

    @property
    def n_steps(self) -> int:
        return len(self.timestamps)

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.stations], dtype=float)

    @property
    def features(self) -> np.ndarray:
        """(N, L, f) stacked station features."""
        if "features" not in self._cache:
            self._cache["features"] = np.stack([s.features for s in self.stations])
        return self._cache["features"]

    @property
    def clearsky(self) -> np.ndarray:
        """(N, L) clear-sky GHI in W/m^2."""
        if "clearsky" not in self._cache:
            p = self.positions
            self._cache["clearsky"] = clearsky_ghi(p[:, :1], p[:, 1:], self.timestamps[None, :])
        return self._cache["clearsky"]

    def node_index(self, ids) -> np.ndarray:
        lookup = {nid: i for i, nid in enumerate(self.node_ids)}
        unknown = [i for i in ids if i not in lookup]
        if unknown:
            raise DatasetError(f"unknown node id(s): {', '.join(map(str, unknown))}")
        return np.array([lookup[i] for i in ids], dtype=int)


# ------------------------------------------------------------------ windows

@dataclass
class Window:
    """T past steps of every modality and H future GHI targets (views into a Dataset)."""

    dataset: Dataset
    start: int
    past_steps: int
    horizon: int

    @property
    def issue_index(self) -> int:
        return self.start + self.past_steps

    @property
    def issue_time(self) -> np.datetime64:
        return self.dataset.timestamps[self.issue_index]

    @property
    def past_times(self) -> np.ndarray:
        return self.dataset.timestamps[self.start:self.issue_index]

    @property
    def future_times(self) -> np.ndarray:
        return self.dataset.timestamps[self.issue_index:self.issue_index + self.horizon]

    @property
    def past_features(self) -> np.ndarray:
        return self.dataset.features[:, self.start:self.issue_index]

    @property
    def target(self) -> np.ndarray:
        """(N, H) future GHI in kW/m^2."""
        return self.dataset.features[:, self.issue_index:self.issue_index + self.horizon, 0]

    @property
    def clearsky_future(self) -> np.ndarray:
        return self.dataset.clearsky[:, self.issue_index:self.issue_index + self.horizon]

    @property
    def clearsky_past(self) -> np.ndarray:
        return self.dataset.clearsky[:, self.start:self.issue_index]

    @property
    def images(self) -> np.ndarray | None:
        if self.dataset.images is None:
            return None
        return self.dataset.images.frames[self.start:self.issue_index]


def window_count(length: int, past_steps: int, horizon: int, stride: int) -> int:
    span = past_steps + horizon
    return 0 if length < span else (length - span) // stride + 1


def make_windows(dataset: Dataset, past_steps: int = 96, horizon: int = 96, stride: int = 1,
                 segments=None) -> list[Window]:
    """All windows with stride ``stride`` lying fully inside one of ``segments``.

    ``segments`` are ``(start_step, end_step)`` half-open ranges; the whole
    series by default.
    """
    if stride <= 0:
        raise ValueError("stride must be positive")
    check_alignment(dataset)
    if segments is None:
        segments = [(0, dataset.n_steps)]
    out = []
    for lo, hi in segments:
        hi = min(hi, dataset.n_steps)
        n = window_count(hi - lo, past_steps, horizon, stride)
        out.extend(Window(dataset, lo + k * stride, past_steps, horizon) for k in range(n))
    return out


def check_alignment(dataset: Dataset) -> None:
    ref = dataset.timestamps
    steps = np.diff(ref.astype("datetime64[m]").astype(np.int64))
    if len(ref) > 1 and np.any(steps != STEP_MINUTES):
        raise DatasetError("station timestamps are not a contiguous 15-minute grid")
    for s in dataset.stations:
        if len(s.timestamps) != len(ref) or np.any(s.timestamps != ref):
            raise DatasetError(f"station {s.node_id} is not time-aligned with the others")
    if dataset.images is not None:
        it = dataset.images.timestamps
        if len(it) != len(ref) or np.any(it != ref):
            raise DatasetError("image timestamps are not aligned with station timestamps")


def day_segments(day_ranges) -> list[tuple[int, int]]:
    return [(int(a) * STEPS_PER_DAY, int(b) * STEPS_PER_DAY) for a, b in day_ranges]


def split_days(n_days: int, eval_days: int, val_fraction: float = 0.1, seed: int = 0,
               min_block_days: int = 2) -> dict:
    """Seeded contiguous test block, validation block carved from the training days.

    Returns day ranges ``{"train": [[a, b], ...], "val": [...], "test": [...]}``.
    """
    if eval_days >= n_days:
        raise ValueError("eval_days must be smaller than n_days")
    rng = np.random.default_rng(seed)
    test_start = int(rng.integers(0, n_days - eval_days + 1))
    test = [[test_start, test_start + eval_days]] if eval_days else []
    rest = [[a, b] for a, b in ([0, test_start], [test_start + eval_days, n_days]) if b > a]
    train_days = sum(b - a for a, b in rest)
    val_days = 0 if val_fraction <= 0 else max(math.ceil(val_fraction * train_days), min_block_days)
    val = []
    if val_days:
        longest = max(range(len(rest)), key=lambda i: rest[i][1] - rest[i][0])
        a, b = rest[longest]
        if b - a - val_days < min_block_days:
            raise ValueError("not enough training days to carve a validation block")
        val = [[b - val_days, b]]
        rest[longest] = [a, b - val_days]
    return {"train": rest, "val": val, "test": test}


# ------------------------------------------------------------ normalisation

@dataclass
class Normalizer:
    """GHI / 1.3 kW/m^2; other features standardised with train-set statistics."""

    mean: list
    std: list
    feature_names: tuple = DEFAULT_FEATURES
    ghi_scale: float = GHI_SCALE

    def __post_init__(self):
        for name, s in zip(self.feature_names[1:], self.std[1:]):
            if not s > 0:
                raise DatasetError(f"feature {name!r} has zero standard deviation")

    @classmethod
    def fit(cls, dataset: Dataset, segments=None) -> "Normalizer":
        feats = dataset.features
        if segments:
            feats = np.concatenate([feats[:, a:b] for a, b in segments], axis=1)
        flat = feats.reshape(-1, feats.shape[-1])
        mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        mean[0], std[0] = 0.0, 1.0
        return cls([float(m) for m in mean], [float(s) for s in std], tuple(dataset.feature_names))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_names"] = list(self.feature_names)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(list(d["mean"]), list(d["std"]), tuple(d["feature_names"]), d.get("ghi_scale", GHI_SCALE))

    def normalize(self, features: np.ndarray) -> np.ndarray:
        x = np.array(features, dtype=float)
        x[..., 0] = x[..., 0] / self.ghi_scale
        x[..., 1:] = (x[..., 1:] - np.asarray(self.mean[1:])) / np.asarray(self.std[1:])
        return x

    def denormalize(self, features: np.ndarray) -> np.ndarray:
        x = np.array(features, dtype=float)
        x[..., 0] = x[..., 0] * self.ghi_scale
        x[..., 1:] = x[..., 1:] * np.asarray(self.std[1:]) + np.asarray(self.mean[1:])
        return x

    def model_inputs(self, window: Window, node_idx=None, patch_size: int = 4,
                     use_images: bool = True) -> ModelInputs:
        idx = slice(None) if node_idx is None else np.asarray(node_idx)
        ds = window.dataset
        images = window.images if use_images else None
        return ModelInputs(
            features=self.normalize(window.past_features[idx]),
            past_times=window.past_times,
            positions=ds.positions[idx],
            clearsky_future=window.clearsky_future[idx],
            images=images,
            patch_positions=ds.images.patch_positions(patch_size) if images is not None else None,
            node_ids=list(np.asarray(ds.node_ids, dtype=object)[idx]),
            future_times=window.future_times,
        )


# ---------------------------------------------------------------- synthetic

@dataclass
class Blob:
    latitude: float
    longitude: float
    radius_km: float
    depth: float
    period_days: float | None = None   # growth/decay cycle; None = constant depth
    phase: float = math.pi / 2


@dataclass
class SceneConfig:
    n_nodes: int = 16
    node_positions: list | None = None      # [(lat, lon), ...]
    bbox: tuple = SWISS_BBOX
    n_days: int = 7
    start: str = "2024-06-01"
    image_size: int = 96
    channels: int = 4
    blob_count: int = 14
    blob_radius_km: tuple = (15.0, 45.0)
    blob_depth: tuple = (0.4, 1.3)
    blob_period_days: tuple = (2.0, 6.0)
    wind_kmh: tuple = (8.0, 30.0)
    wind_swing_kmh: float = 8.0
    wind_period_days: float = 3.0
    blobs: list | None = None               # explicit Blob list overrides random blobs
    wind: tuple | None = None               # explicit constant (east, north) km/h
    noise: bool = True
    eval_days: int = 0
    val_fraction: float = 0.1
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bbox"] = list(self.bbox)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        if d.get("blobs"):
            d["blobs"] = [b if isinstance(b, Blob) else Blob(**b) for b in d["blobs"]]
        for key in ("bbox", "blob_radius_km", "blob_depth", "blob_period_days", "wind_kmh"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return cls(**d)


class CloudField:
    """Gaussian optical-depth blobs advected by a slowly varying wind, periodic in x/y."""

    def __init__(self, cfg: SceneConfig, times: np.ndarray, rng: np.random.Generator):
        lon_min, lat_min, lon_max, lat_max = cfg.bbox
        self.lon_min, self.lat_min = lon_min, lat_min
        self.km_per_deg_lon = KM_PER_DEG_LAT * math.cos(math.radians(0.5 * (lat_min + lat_max)))
        self.width_km = (lon_max - lon_min) * self.km_per_deg_lon
        self.height_km = (lat_max - lat_min) * KM_PER_DEG_LAT
        if cfg.blobs is not None:
            blobs = list(cfg.blobs)
        else:
            blobs = []
            for _ in range(cfg.blob_count):
                blobs.append(Blob(
                    latitude=rng.uniform(lat_min, lat_max),
                    longitude=rng.uniform(lon_min, lon_max),
                    radius_km=rng.uniform(*cfg.blob_radius_km),
                    depth=rng.uniform(*cfg.blob_depth),
                    period_days=rng.uniform(*cfg.blob_period_days),
                    phase=rng.uniform(0, 2 * math.pi),
                ))
        self.blobs = blobs
        hours = (times - times[0]).astype("timedelta64[m]").astype(float) / 60.0
        self.hours = hours
        if cfg.wind is not None:
            u = np.full(len(times), float(cfg.wind[0]))
            v = np.full(len(times), float(cfg.wind[1]))
        else:
            speed = rng.uniform(*cfg.wind_kmh)
            heading = rng.uniform(0, 2 * math.pi)
            swing_phase = rng.uniform(0, 2 * math.pi)
            w = 2 * math.pi * hours / (24.0 * cfg.wind_period_days) + swing_phase
            u = speed * math.cos(heading) + cfg.wind_swing_kmh * np.sin(w)
            v = speed * math.sin(heading) + cfg.wind_swing_kmh * np.cos(w)
        dt = STEP_MINUTES / 60.0
        self.shift_x = np.concatenate([[0.0], np.cumsum(u[:-1] * dt)])
        self.shift_y = np.concatenate([[0.0], np.cumsum(v[:-1] * dt)])

    def to_km(self, lat, lon):
        x = (np.asarray(lon, dtype=float) - self.lon_min) * self.km_per_deg_lon
        y = (np.asarray(lat, dtype=float) - self.lat_min) * KM_PER_DEG_LAT
        return x, y

    def amplitude(self, blob: Blob, step: int) -> float:
        if blob.period_days is None:
            return blob.depth
        return blob.depth * 0.5 * (1.0 + math.sin(2 * math.pi * self.hours[step] / (24.0 * blob.period_days) + blob.phase))

    def tau(self, step: int, lat, lon) -> np.ndarray:
        """Optical depth at points (broadcast lat/lon) and time index ``step``."""
        x, y = self.to_km(lat, lon)
        total = np.zeros(np.broadcast(x, y).shape)
        for blob in self.blobs:
            amp = self.amplitude(blob, step)
            if amp == 0.0:
                continue
            bx, by = self.to_km(blob.latitude, blob.longitude)
            dx = x - (bx + self.shift_x[step])
            dy = y - (by + self.shift_y[step])
            dx -= self.width_km * np.round(dx / self.width_km)
            dy -= self.height_km * np.round(dy / self.height_km)
            total += amp * np.exp(-(dx * dx + dy * dy) / (2.0 * blob.radius_km ** 2))
        return total

    def lipschitz_per_km(self) -> float:
        """Upper bound on |grad tau| in 1/km (each Gaussian peaks at A/(sigma*sqrt(e)))."""
        return sum(b.depth / (b.radius_km * math.sqrt(math.e)) for b in self.blobs)


def _scene_positions(cfg: SceneConfig, rng) -> np.ndarray:
    if cfg.node_positions is not None:
        pos = np.asarray(cfg.node_positions, dtype=float)
    else:
        lon_min, lat_min, lon_max, lat_max = cfg.bbox
        mx, my = 0.05 * (lon_max - lon_min), 0.05 * (lat_max - lat_min)
        pos = np.stack([rng.uniform(lat_min + my, lat_max - my, cfg.n_nodes),
                        rng.uniform(lon_min + mx, lon_max - mx, cfg.n_nodes)], axis=-1)
    lon_min, lat_min, lon_max, lat_max = cfg.bbox
    inside = (pos[:, 0] >= lat_min) & (pos[:, 0] <= lat_max) & (pos[:, 1] >= lon_min) & (pos[:, 1] <= lon_max)
    if not inside.all():
        raise ValueError("scene nodes must lie inside the bounding box")
    return pos


def synth_generate(cfg: SceneConfig) -> Dataset:
    """Deterministic coupled station/image scene from ``cfg.seed``.

    Station GHI = clear-sky * max(0, 1 - tau); image channel 0 is min(tau, 1) on
    the pixel grid, channels 1-3 are smoothed/shifted versions of it mixed
    with a diurnal brightness term.
    """
    rng = np.random.default_rng(cfg.seed)
    n_steps = cfg.n_days * STEPS_PER_DAY
    times = np.datetime64(cfg.start, "m") + np.arange(n_steps) * np.timedelta64(STEP_MINUTES, "m")
    pos = _scene_positions(cfg, rng)
    altitude = rng.uniform(300.0, 2000.0, len(pos))
    field_ = CloudField(cfg, times, rng)

    cs = clearsky_ghi(pos[:, :1], pos[:, 1:], times[None, :]) / 1000.0  # kW/m^2
    tau_nodes = np.stack([field_.tau(k, pos[:, 0], pos[:, 1]) for k in range(n_steps)], axis=1)
    ghi = cs * np.maximum(0.0, 1.0 - tau_nodes)
    cover = np.minimum(tau_nodes, 1.0)
    doy = (times.astype("datetime64[D]") - times.astype("datetime64[Y]").astype("datetime64[D]")).astype(float)
    season = np.sin(2 * np.pi * (doy - 80) / 365.0)
    temp = 10.0 + 8.0 * season + 10.0 * cs * (1.0 - 0.6 * cover) - 0.004 * (altitude[:, None] - 500.0)
    hum = 55.0 + 30.0 * cover - 15.0 * cs
    if cfg.noise:
        temp = temp + rng.normal(0.0, 0.3, temp.shape)
        hum = hum + rng.normal(0.0, 1.0, hum.shape)
    hum = np.clip(hum, 0.0, 100.0)

    stations = []
    for i in range(len(pos)):
        feats = np.stack([ghi[i], temp[i], hum[i]], axis=-1)
        stations.append(StationSeries(f"N{i:02d}", float(pos[i, 0]), float(pos[i, 1]), times,
                                      feats, float(altitude[i])))

    images = None
    if cfg.image_size > 0:
        images = ImageSequence(times, np.zeros((n_steps, cfg.image_size, cfg.image_size, cfg.channels)),
                               tuple(cfg.bbox))
        lat_c, lon_c = images.pixel_centers()
        glat, glon = np.meshgrid(lat_c, lon_c, indexing="ij")
        centre_lat = 0.5 * (cfg.bbox[1] + cfg.bbox[3])
        centre_lon = 0.5 * (cfg.bbox[0] + cfg.bbox[2])
        sun = np.clip(np.cos(np.radians(solar_zenith(centre_lat, centre_lon, times))), 0.0, 1.0)
        for k in range(n_steps):
            c0 = np.minimum(field_.tau(k, glat, glon), 1.0)
            frame = images.frames[k]
            frame[..., 0] = c0
            if cfg.channels > 1:
                frame[..., 1] = gaussian_filter(c0, sigma=2.0, mode="wrap")
            if cfg.channels > 2:
                frame[..., 2] = 0.8 * np.roll(c0, shift=(1, 1), axis=(0, 1)) + 0.2 * sun[k]
            if cfg.channels > 3:
                frame[..., 3] = sun[k] * (0.3 + 0.7 * c0)
        np.clip(images.frames, 0.0, 1.0, out=images.frames)

    splits = {}
    if cfg.eval_days:
        splits = split_days(cfg.n_days, cfg.eval_days, cfg.val_fraction, cfg.seed)
    else:
        splits = {"train": [[0, cfg.n_days]], "val": [], "test": []}
    ds = Dataset(stations, images, tuple(cfg.bbox), DEFAULT_FEATURES, splits,
                 extra={"scene": cfg.to_dict()})
    train_segments = day_segments(splits["train"]) if splits.get("train") else None
    ds.normalization = Normalizer.fit(ds, train_segments).to_dict()
    ds.extra["cloud_field"] = field_
    return ds


# ----------------------------------------------------------------- disk IO

def _fmt_time(t) -> str:
    return str(np.datetime64(t, "m"))


def save_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    (path / "stations").mkdir(parents=True, exist_ok=True)
    check_alignment(ds)
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "units": {"ghi": "kW/m^2", "temperature": "degC", "humidity": "%", "images": "normalised [0, 1]"},
        "bbox": list(ds.bbox),
        "time": {"start": _fmt_time(ds.timestamps[0]), "steps": int(ds.n_steps), "step_minutes": STEP_MINUTES},
        "features": list(ds.feature_names),
        "nodes": [{"id": s.node_id, "lat": s.latitude, "lon": s.longitude, "altitude": s.altitude,
                   "file": f"stations/{s.node_id}.csv"} for s in ds.stations],
        "images": None,
        "normalization": ds.normalization,
        "splits": ds.splits,
    }
    if "scene" in ds.extra:
        scene = dict(ds.extra["scene"])
        scene["blobs"] = [asdict(b) if isinstance(b, Blob) else b for b in (scene.get("blobs") or [])] or None
        manifest["scene"] = scene
    for s in ds.stations:
        with open(path / "stations" / f"{s.node_id}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["timestamp", *ds.feature_names])
            for t, row in zip(s.timestamps, s.features):
                writer.writerow([_fmt_time(t), *(repr(float(v)) for v in row)])
    if ds.images is not None:
        (path / "images").mkdir(exist_ok=True)
        frames = np.ascontiguousarray(ds.images.frames, dtype="<f8")
        frames.tofile(path / "images" / "frames.bin")
        with open(path / "images" / "index.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "timestamp"])
            for i, t in enumerate(ds.images.timestamps):
                writer.writerow([i, _fmt_time(t)])
        _, h, w, c = frames.shape
        manifest["images"] = {
            "file": "images/frames.bin", "index": "images/index.csv", "dtype": "float64",
            "order": "frame,row,col,channel", "height": h, "width": w, "channels": c,
            "bbox": list(ds.images.bbox), "channel_names": ["cloud_depth", "smoothed", "shifted", "visible"][:c],
        }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _read_station_csv(fpath: Path):
    with open(fpath, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    times = np.array([r[0] for r in rows], dtype="datetime64[m]")
    feats = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float).reshape(len(rows), len(header) - 1)
    return header, times, feats


def validate_dataset(path) -> list[str]:
    """Diagnostics for a dataset directory; an empty list means valid."""
    path = Path(path)
    problems: list[str] = []
    mpath = path / "manifest.json"
    if not mpath.is_file():
        return [f"{mpath}: missing manifest"]
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        return [f"{mpath}: invalid JSON ({exc})"]
    for key in ("format", "version", "bbox", "time", "features", "nodes"):
        if key not in manifest:
            problems.append(f"manifest: missing key {key!r}")
    if problems:
        return problems
    if manifest["format"] != DATASET_FORMAT:
        problems.append(f"manifest: format {manifest['format']!r} is not {DATASET_FORMAT!r}")
    if manifest["version"] != DATASET_VERSION:
        problems.append(f"manifest: unsupported version {manifest['version']}")
    lon_min, lat_min, lon_max, lat_max = manifest["bbox"]
    steps = int(manifest["time"]["steps"])
    if manifest["time"].get("step_minutes", STEP_MINUTES) != STEP_MINUTES:
        problems.append("manifest: step_minutes must be 15")
    try:
        start = as_timestamps(manifest["time"]["start"])
    except ValueError as exc:
        problems.append(f"manifest: time.start {exc}")
        start = None
    expected = None if start is None else start + np.arange(steps) * np.timedelta64(STEP_MINUTES, "m")
    features = manifest["features"]
    if not features or features[0] != "ghi":
        problems.append("manifest: first feature must be 'ghi'")
    seen = set()
    for node in manifest["nodes"]:
        nid = node.get("id")
        if nid in seen:
            problems.append(f"node {nid}: duplicate id")
        seen.add(nid)
        if not (lat_min <= node.get("lat", math.nan) <= lat_max and lon_min <= node.get("lon", math.nan) <= lon_max):
            problems.append(f"node {nid}: position ({node.get('lat')}, {node.get('lon')}) outside bbox")
        fpath = path / node.get("file", f"stations/{nid}.csv")
        if not fpath.is_file():
            problems.append(f"node {nid}: missing file {fpath.relative_to(path)}")
            continue
        try:
            header, times, feats = _read_station_csv(fpath)
        except (ValueError, StopIteration) as exc:
            problems.append(f"node {nid}: unreadable series ({exc})")
            continue
        if header[1:] != features:
            problems.append(f"node {nid}: columns {header[1:]} differ from manifest features {features}")
        if len(times) != steps:
            problems.append(f"node {nid}: {len(times)} rows, manifest says {steps}")
        elif expected is not None and np.any(times != expected):
            bad = int(np.argmax(times != expected))
            problems.append(f"node {nid}: row {bad + 2} timestamp {times[bad]} expected {expected[bad]}")
        if not np.isfinite(feats).all():
            problems.append(f"node {nid}: non-finite values")
        elif feats.size and feats[:, 0].min() < 0:
            problems.append(f"node {nid}: negative GHI at row {int(np.argmin(feats[:, 0])) + 2}")
    img = manifest.get("images")
    if img:
        fpath = path / img["file"]
        shape = (steps, img["height"], img["width"], img["channels"])
        if not fpath.is_file():
            problems.append(f"images: missing {img['file']}")
        else:
            size = fpath.stat().st_size
            if size != int(np.prod(shape)) * 8:
                problems.append(f"images: {img['file']} has {size} bytes, expected {int(np.prod(shape)) * 8} for {shape}")
            else:
                frames = np.memmap(fpath, dtype="<f8", mode="r", shape=shape)
                if not np.isfinite(frames).all():
                    problems.append("images: non-finite pixel values")
                elif frames.min() < 0 or frames.max() > 1:
                    problems.append("images: pixel values outside [0, 1]")
        ipath = path / img["index"]
        if not ipath.is_file():
            problems.append(f"images: missing index {img['index']}")
        else:
            with open(ipath, newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            if len(rows) != steps:
                problems.append(f"images: index has {len(rows)} frames, manifest says {steps}")
            elif expected is not None and np.any(np.array([r[1] for r in rows], dtype="datetime64[m]") != expected):
                problems.append("images: index timestamps not aligned with station grid")
    days = steps // STEPS_PER_DAY
    for name, ranges in (manifest.get("splits") or {}).items():
        for a, b in ranges:
            if not 0 <= a < b <= days:
                problems.append(f"splits: {name} range [{a}, {b}) outside 0..{days} days")
    return problems


def load_dataset(path) -> Dataset:
    path = Path(path)
    problems = validate_dataset(path)
    if problems:
        raise DatasetError(f"{path}: " + "; ".join(problems[:5]))
    manifest = json.loads((path / "manifest.json").read_text())
    stations = []
    for node in manifest["nodes"]:
        _, times, feats = _read_station_csv(path / node.get("file", f"stations/{node['id']}.csv"))
        stations.append(StationSeries(node["id"], float(node["lat"]), float(node["lon"]), times, feats,
                                      float(node.get("altitude", 0.0))))
    images = None
    img = manifest.get("images")
    if img:
        shape = (manifest["time"]["steps"], img["height"], img["width"], img["channels"])
        frames = np.fromfile(path / img["file"], dtype="<f8").reshape(shape)
        images = ImageSequence(stations[0].timestamps.copy(), frames, tuple(img["bbox"]))
    ds = Dataset(stations, images, tuple(manifest["bbox"]), tuple(manifest["features"]),
                 manifest.get("splits") or {}, manifest.get("normalization"))
    if "scene" in manifest:
        ds.extra["scene"] = manifest["scene"]
    return ds


def dataset_size_hint(path) -> int:
    """Total bytes of a dataset directory (used by the CLI for progress messages)."""
    return sum(os.path.getsize(os.path.join(r, f)) for r, _, fs in os.walk(path) for f in fs)
