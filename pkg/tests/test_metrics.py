import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from solarcrossformer.baselines import clearsky_forecast, latest_clearsky_index, smart_persistence
from solarcrossformer.metrics import (
    EvalSlice,
    aggregate_report,
    build_slices,
    deterministic_metrics,
    probabilistic_metrics,
    write_report,
)

from oracles import ref_deterministic, ref_probabilistic

LEVELS = (0.05, 0.5, 0.95)


def random_slice(rng, n=5, zeros=0):
    y = rng.uniform(0, 1.2, n)
    y[:zeros] = 0.0
    q = np.sort(y[:, None] + rng.normal(0, 0.15, (n, 3)), axis=1)
    return y, q


# --------------------------------------------------------------- examples

def test_deterministic_examples():
    y = np.array([0.5, 0.8, 1.0])
    assert deterministic_metrics(y, y) == {"nrmse": 0.0, "nmae": 0.0, "mape": 0.0}
    m = deterministic_metrics(y, y + np.array([0.13, -0.13, 0.13]))
    assert m["nmae"] == pytest.approx(0.1, abs=1e-15)
    assert m["nrmse"] == pytest.approx(0.1, abs=1e-15)
    m = deterministic_metrics([0.05, 0.2], [0.1, 0.1])
    assert m["mape"] == pytest.approx(0.5, abs=1e-15)


def test_probabilistic_examples():
    y = np.array([1.0, 1.0])
    inside = np.array([[0.5, 1.0, 1.5], [0.5, 1.0, 1.5]])
    m = probabilistic_metrics(y, inside)
    assert m["picp"] == 1.0
    assert m["pinaw"] == 1.0
    half = np.array([[0.5, 1.0, 1.5], [1.2, 1.3, 1.4]])
    assert probabilistic_metrics(y, half)["picp"] == 0.5
    exact = np.repeat(y[:, None], 3, axis=1)
    assert probabilistic_metrics(y, exact)["ncrps"] == 0.0


def test_undefined_values_are_nan():
    m = deterministic_metrics([0.0, 0.0], [0.1, 0.2], night_excluded=True)
    assert math.isnan(m["nrmse"]) and math.isnan(m["nmae"]) and math.isnan(m["mape"])
    assert math.isnan(deterministic_metrics([0.05], [0.1])["mape"])
    p = probabilistic_metrics([0.0, 0.0], np.zeros((2, 3)))
    assert math.isnan(p["pinaw"]) and p["picp"] == 1.0


def test_probabilistic_rejects_bad_shapes():
    with pytest.raises(ValueError):
        probabilistic_metrics([1.0], np.zeros((1, 2)))
    with pytest.raises(ValueError):
        probabilistic_metrics([1.0, 2.0], np.zeros((1, 3)))


# ---------------------------------------------------------------- oracles

@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("night_excluded", [False, True])
def test_metrics_match_oracle(seed, night_excluded):
    rng = np.random.default_rng(seed)
    y, q = random_slice(rng, zeros=1)
    got = deterministic_metrics(y, q[:, 1], night_excluded=night_excluded)
    want = ref_deterministic(y, q[:, 1], night_excluded=night_excluded)
    for k in want:
        assert got[k] == pytest.approx(want[k], abs=1e-12, nan_ok=True), k
    got = probabilistic_metrics(y, q)
    want = ref_probabilistic(y, q)
    for k in want:
        assert abs(got[k] - want[k]) <= 1e-12, k


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_rmse_at_least_mae_and_order_invariant(seed):
    rng = np.random.default_rng(seed)
    y, q = random_slice(rng, n=7, zeros=int(rng.integers(0, 3)))
    for excl in (False, True):
        m = deterministic_metrics(y, q[:, 1], night_excluded=excl)
        assert m["nrmse"] >= m["nmae"] - 1e-15
    perm = rng.permutation(len(y))
    a = {**deterministic_metrics(y, q[:, 1]), **probabilistic_metrics(y, q)}
    b = {**deterministic_metrics(y[perm], q[perm, 1]), **probabilistic_metrics(y[perm], q[perm])}
    for k in a:
        assert a[k] == pytest.approx(b[k], abs=1e-12, nan_ok=True)


@pytest.mark.parametrize("seed", range(10))
def test_degenerate_forecast_crps_equals_nmae(seed):
    # for the symmetric level set the pinball sum over levels is 1.5|e|, so the constant is 1
    rng = np.random.default_rng(seed)
    y = rng.uniform(0, 1.2, 5)
    f = rng.uniform(0, 1.2, 5)
    q = np.repeat(f[:, None], 3, axis=1)
    ncrps = probabilistic_metrics(y, q)["ncrps"]
    assert ncrps == pytest.approx(ref_probabilistic(y, q)["ncrps"], abs=1e-12)
    assert ncrps == pytest.approx(deterministic_metrics(y, f)["nmae"], abs=1e-12)


# ------------------------------------------------------------- aggregation

def toy_grid():
    """3 nodes x 2 leads, one point each, with hand-chosen absolute errors."""
    times = np.array(["2024-06-01T10:00"], dtype="datetime64[m]")
    errors = {("A", 0): 1.0, ("B", 0): 2.0, ("C", 0): 9.0, ("A", 1): 0.04, ("B", 1): 0.06, ("C", 1): 0.05}
    slices = []
    for (node, lead), e in errors.items():
        truth = 0.5
        f = truth + e * 1.3 / 100.0  # NMAE = e percent
        slices.append(EvalSlice(node, lead, [truth], [[f - 0.1, f, f + 0.1]], times, LEVELS))
    return slices


def test_toy_grid_aggregation():
    rep = aggregate_report(toy_grid())
    by_lead = rep.by_lead["night_excluded"]
    assert by_lead[0]["lead"] == 0 and by_lead[0]["nmae"] == pytest.approx(0.02, abs=1e-15)
    assert by_lead[1]["nmae"] == pytest.approx(0.0005, abs=1e-15)
    # single point per slice: NRMSE == NMAE, so the lead-0 median is again the middle node
    assert by_lead[0]["nrmse"] == pytest.approx(0.02, abs=1e-15)
    overall = rep.overall["night_excluded"]["nmae"]
    assert overall == pytest.approx((1 + 2 + 9 + 0.04 + 0.06 + 0.05) / 6 / 100, abs=1e-15)
    tod = rep.by_prediction_time["night_excluded"]
    assert [r["prediction_time"] for r in tod] == ["10:00"]
    assert tod[0]["nmae"] == pytest.approx(overall, abs=1e-15)


def test_horizon_mean_of_two_leads():
    times = np.array(["2024-06-01T10:00"], dtype="datetime64[m]")
    slices = [EvalSlice("A", h, [0.5], [[0.4, 0.5 + e * 1.3, 0.6 + e * 1.3]], times, LEVELS)
              for h, e in enumerate((0.04, 0.06))]
    assert aggregate_report(slices).overall["night_excluded"]["nmae"] == pytest.approx(0.05, abs=1e-15)


def test_single_slice_aggregate_equals_slice():
    rng = np.random.default_rng(0)
    y, q = random_slice(rng)
    times = np.datetime64("2024-06-01T10:00") + np.arange(5) * np.timedelta64(1, "D")
    rep = aggregate_report([EvalSlice("A", 0, y, q, times)])
    want = {**deterministic_metrics(y, q[:, 1], night_excluded=True), **probabilistic_metrics(y, q, night_excluded=True)}
    for k, v in want.items():
        assert rep.overall["night_excluded"][k] == v
        assert rep.by_lead["night_excluded"][0][k] == v


def test_no_mape_for_night_included(tmp_path):
    rep = aggregate_report(toy_grid())
    assert "mape" not in rep.overall["night_included"]
    assert all("mape" not in r for r in rep.by_lead["night_included"] + rep.slices["night_included"])
    assert "mape" in rep.overall["night_excluded"]
    write_report(rep, tmp_path)
    for view in ("slices", "by_lead", "by_prediction_time", "overall"):
        with open(tmp_path / f"{view}_night_included.csv") as fh:
            assert "mape_pct" not in next(csv.reader(fh))
        with open(tmp_path / f"{view}_night_excluded.csv") as fh:
            assert "mape_pct" in next(csv.reader(fh))


def test_by_prediction_time_groups_issue_times():
    times = np.array(["2024-06-01T10:00", "2024-06-01T11:00", "2024-06-02T10:00"], dtype="datetime64[m]")
    y = np.array([0.5, 0.5, 0.5])
    f = np.array([0.5 + 0.013, 0.5 + 0.026, 0.5 + 0.039])
    s = EvalSlice("A", 0, y, np.repeat(f[:, None], 3, axis=1), times)
    tod = {r["prediction_time"]: r["nmae"] for r in aggregate_report([s]).by_prediction_time["night_excluded"]}
    assert tod["10:00"] == pytest.approx(0.02, abs=1e-14)
    assert tod["11:00"] == pytest.approx(0.02, abs=1e-14)


def test_build_slices_order_and_report_files(tmp_path):
    rng = np.random.default_rng(1)
    truth = rng.uniform(0, 1, (4, 3, 2))
    fc = np.sort(truth[..., None] + rng.normal(0, 0.1, (4, 3, 2, 3)), axis=-1)
    times = np.datetime64("2024-06-01T00:00") + np.arange(4) * np.timedelta64(6, "h")
    slices = build_slices(truth, fc, ["N2", "N0", "N1"], times)
    assert [(s.node_id, s.lead) for s in slices] == [(n, h) for n in ("N0", "N1", "N2") for h in (0, 1)]
    np.testing.assert_array_equal(slices[0].truth, truth[:, 1, 0])
    paths = write_report(aggregate_report(slices), tmp_path)
    assert len(paths) == 8
    with open(tmp_path / "by_lead_night_excluded.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "lead" and [r[0] for r in rows[1:]] == ["1", "2"]


# ---------------------------------------------------------------- baselines

def test_baselines():
    cs_future = np.array([[0.0, 500.0, 1000.0]])
    np.testing.assert_array_equal(clearsky_forecast(cs_future), [[0.0, 0.5, 1.0]])
    past_ghi = np.array([[0.2, 0.3, 0.0], [0.0, 0.0, 0.0]])
    past_cs = np.array([[400.0, 600.0, 20.0], [0.0, 10.0, 0.0]])
    np.testing.assert_allclose(latest_clearsky_index(past_ghi, past_cs), [0.5, 1.0])
    sp = smart_persistence(past_ghi, past_cs, np.array([[800.0, 0.0], [800.0, 100.0]]))
    np.testing.assert_allclose(sp, [[0.4, 0.0], [0.8, 0.1]])
