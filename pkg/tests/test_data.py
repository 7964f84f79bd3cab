import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from solarcrossformer.data import (
    KM_PER_DEG_LAT,
    STEPS_PER_DAY,
    Blob,
    DatasetError,
    Normalizer,
    SceneConfig,
    load_dataset,
    make_windows,
    save_dataset,
    split_days,
    synth_generate,
    validate_dataset,
    window_count,
)


def tiny_scene(**kw):
    base = dict(n_nodes=4, n_days=2, image_size=16, seed=3)
    base.update(kw)
    return SceneConfig(**base)


@pytest.fixture(scope="module")
def scene():
    return synth_generate(tiny_scene())


# ---------------------------------------------------------------- generator

def test_no_blobs_gives_clearsky():
    ds = synth_generate(tiny_scene(blobs=[]))
    np.testing.assert_array_equal(ds.features[..., 0], ds.clearsky / 1000.0)


def test_half_depth_blob_over_station_halves_ghi():
    pos = [(46.8, 8.2)]
    cfg = tiny_scene(n_nodes=1, node_positions=pos, wind=(0.0, 0.0), noise=False,
                     blobs=[Blob(46.8, 8.2, 30.0, 0.5, period_days=None)])
    ds = synth_generate(cfg)
    cs = ds.clearsky[0] / 1000.0
    np.testing.assert_allclose(ds.features[0, :, 0], 0.5 * cs, rtol=1e-15, atol=0)


def test_same_seed_bit_identical_and_seed_matters():
    a, b = synth_generate(tiny_scene()), synth_generate(tiny_scene())
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.images.frames, b.images.frames)
    assert a.positions.tolist() == b.positions.tolist()
    c = synth_generate(tiny_scene(seed=4))
    assert not np.array_equal(a.features, c.features)


def test_ghi_bounded_by_clearsky(scene):
    ghi = scene.features[..., 0]
    cs = scene.clearsky / 1000.0
    assert np.all(ghi >= 0)
    assert np.all(ghi <= cs)
    assert np.all(ghi[cs == 0] == 0)


def test_images_finite_and_normalised(scene):
    f = scene.images.frames
    assert f.shape == (2 * STEPS_PER_DAY, 16, 16, 4)
    assert np.isfinite(f).all() and f.min() >= 0 and f.max() <= 1


def test_channel_zero_matches_station_depth():
    ds = synth_generate(tiny_scene(image_size=32, n_days=1))
    field = ds.extra["cloud_field"]
    lat_c, lon_c = ds.images.pixel_centers()
    lon_min, lat_min, lon_max, lat_max = ds.bbox
    # largest distance from a point to its nearest pixel centre
    half_w = 0.5 * (lon_max - lon_min) / 32 * field.km_per_deg_lon
    half_h = 0.5 * (lat_max - lat_min) / 32 * KM_PER_DEG_LAT
    bound = field.lipschitz_per_km() * math.hypot(half_w, half_h)
    ghi, cs = ds.features[..., 0], ds.clearsky / 1000.0
    checked = 0
    for i, (lat, lon) in enumerate(ds.positions):
        r, c = int(np.argmin(np.abs(lat_c - lat))), int(np.argmin(np.abs(lon_c - lon)))
        for k in range(ds.n_steps):
            if cs[i, k] <= 0 or ghi[i, k] <= 0:
                continue
            tau_station = 1.0 - ghi[i, k] / cs[i, k]
            assert abs(ds.images.frames[k, r, c, 0] - tau_station) <= bound + 1e-9
            checked += 1
    assert checked > 50


def test_nodes_outside_bbox_rejected():
    with pytest.raises(ValueError):
        synth_generate(tiny_scene(n_nodes=1, node_positions=[(10.0, 8.0)]))


# ------------------------------------------------------------------ windows

@pytest.mark.parametrize("length,expected", [(192, 1), (288, 2), (191, 0)])
def test_window_count_examples(length, expected):
    assert window_count(length, 96, 96, 96) == expected


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2000), st.integers(1, 100), st.integers(1, 100), st.integers(1, 50))
def test_window_count_formula(length, t, h, stride):
    brute = sum(1 for s in range(0, length, stride) if s + t + h <= length)
    assert window_count(length, t, h, stride) == brute


def test_make_windows_contents(scene):
    wins = make_windows(scene, 96, 96, stride=96)
    assert len(wins) == 1
    w = wins[0]
    assert w.past_features.shape == (4, 96, 3)
    assert w.target.shape == (4, 96)
    assert w.images.shape == (96, 16, 16, 4)
    assert w.issue_time == scene.timestamps[96]
    np.testing.assert_array_equal(w.target, scene.features[:, 96:, 0])


def test_make_windows_respects_segments(scene):
    wins = make_windows(scene, 8, 8, stride=4, segments=[(0, 40), (100, 130)])
    assert len(wins) == window_count(40, 8, 8, 4) + window_count(30, 8, 8, 4)
    assert all(w.start + 16 <= 40 or (w.start >= 100 and w.start + 16 <= 130) for w in wins)


def test_misaligned_timestamps_rejected():
    ds = synth_generate(tiny_scene())
    ds.stations[1].timestamps = ds.stations[1].timestamps + np.timedelta64(15, "m")
    with pytest.raises(DatasetError, match="N01"):
        make_windows(ds, 4, 4)
    ds = synth_generate(tiny_scene())
    ds.images.timestamps = ds.images.timestamps[::-1].copy()
    with pytest.raises(DatasetError, match="image"):
        make_windows(ds, 4, 4)


# ------------------------------------------------------------ normalisation

def test_normalize_examples():
    norm = Normalizer([0.0, 10.0, 50.0], [1.0, 2.0, 5.0])
    out = norm.normalize(np.array([[1.3, 12.0, 40.0], [0.0, 10.0, 50.0]]))
    assert out[0, 0] == 1.0 and out[1, 0] == 0.0
    np.testing.assert_allclose(out[0, 1:], [1.0, -2.0], atol=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_normalize_round_trip(seed):
    rng = np.random.default_rng(seed)
    norm = Normalizer([0.0, *rng.normal(size=2)], [1.0, *rng.uniform(0.1, 5, 2)])
    x = rng.normal(size=(3, 5, 3)) * [1.0, 20.0, 40.0]
    np.testing.assert_allclose(norm.denormalize(norm.normalize(x)), x, atol=1e-12, rtol=0)


def test_zero_std_rejected_with_name():
    with pytest.raises(DatasetError, match="humidity"):
        Normalizer([0.0, 1.0, 2.0], [1.0, 1.0, 0.0])
    ds = synth_generate(tiny_scene(n_days=1))
    for s in ds.stations:
        s.features[:, 1] = 20.0
    ds._cache.clear()
    with pytest.raises(DatasetError, match="temperature"):
        Normalizer.fit(ds)


def test_normalizer_uses_train_segments_only():
    ds = synth_generate(tiny_scene(n_days=10, eval_days=3, image_size=0))
    norm = Normalizer.from_dict(ds.normalization)
    segs = [(a * STEPS_PER_DAY, b * STEPS_PER_DAY) for a, b in ds.splits["train"]]
    temp = np.concatenate([ds.features[:, a:b, 1] for a, b in segs], axis=1)
    assert norm.mean[1] == pytest.approx(temp.mean(), rel=1e-12)
    assert norm.std[1] == pytest.approx(temp.std(), rel=1e-12)


# ------------------------------------------------------------------- splits

def test_split_days_partition():
    s = split_days(30, 6, 0.1, seed=0)
    days = sorted(d for part in s.values() for a, b in part for d in range(a, b))
    assert days == list(range(30))
    assert sum(b - a for a, b in s["test"]) == 6
    assert sum(b - a for a, b in s["val"]) == 3
    assert split_days(30, 6, 0.1, seed=0) == s


def test_split_days_rejects_too_many_eval_days():
    with pytest.raises(ValueError):
        split_days(5, 5)


# ----------------------------------------------------------------- disk IO

def test_save_load_round_trip(tmp_path, scene):
    path = save_dataset(scene, tmp_path / "ds")
    assert validate_dataset(path) == []
    back = load_dataset(path)
    assert back.node_ids == scene.node_ids
    assert np.array_equal(back.features, scene.features)
    assert np.array_equal(back.images.frames, scene.images.frames)
    assert np.array_equal(back.timestamps, scene.timestamps)
    assert back.normalization == scene.normalization
    assert back.splits == scene.splits


def test_validate_reports_precise_problems(tmp_path, scene):
    path = save_dataset(scene, tmp_path / "ds")
    manifest = json.loads((path / "manifest.json").read_text())
    manifest["nodes"][0]["lat"] = 60.0
    (path / "manifest.json").write_text(json.dumps(manifest))
    lines = (path / "stations" / "N01.csv").read_text().splitlines()
    lines[2] = lines[2].replace(":15", ":20", 1)
    (path / "stations" / "N01.csv").write_text("\n".join(lines) + "\n")
    (path / "images" / "frames.bin").write_bytes(b"\0" * 16)
    problems = validate_dataset(path)
    assert any("N00" in p and "outside bbox" in p for p in problems)
    assert any("N01" in p and "row 3" in p for p in problems)
    assert any("frames.bin" in p and "bytes" in p for p in problems)
    with pytest.raises(DatasetError):
        load_dataset(path)


def test_validate_missing_manifest(tmp_path):
    assert "missing manifest" in validate_dataset(tmp_path)[0]
