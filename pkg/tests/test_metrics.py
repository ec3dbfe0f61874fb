import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import gaussian_kde

from msforecast.metrics import (METRICS, BandwidthFallbackWarning, ForecastSet, MetricReport, ecfl, kde_nll,
                                min_ade, min_fde, read_metric_csv, scene_metrics)
from msforecast.raster import Homography

from conftest import binary_grid

IDENT = Homography(np.eye(3))


def brute_ade(samples, gt):
    best = math.inf
    for s in samples:
        total = 0.0
        for p, q in zip(s, gt):
            dx, dy = p[0] - q[0], p[1] - q[1]
            total += math.sqrt(dx * dx + dy * dy)
        best = min(best, total / len(gt))
    return best


def brute_fde(samples, gt):
    best = math.inf
    for s in samples:
        dx, dy = s[-1][0] - gt[-1][0], s[-1][1] - gt[-1][1]
        best = min(best, math.sqrt(dx * dx + dy * dy))
    return best


def brute_ecfl(samples, free):
    ok = 0
    for s in samples:
        good = True
        for x, y in s:
            c, r = int(math.floor(abs(x) + 0.5) * (1 if x >= 0 else -1)), int(math.floor(abs(y) + 0.5) * (1 if y >= 0 else -1))
            if not (0 <= r < free.shape[0] and 0 <= c < free.shape[1] and free[r, c]):
                good = False
                break
        ok += good
    return 100.0 * ok / len(samples)


def random_set(rng, k=None, t_f=None):
    k = k or int(rng.integers(1, 9))
    t_f = t_f or int(rng.integers(1, 13))
    gt = rng.uniform(0, 30, size=(t_f, 2))
    return ForecastSet("s", gt + rng.normal(0, 3, size=(k, t_f, 2)), gt)


def test_brute_force_oracle_random_sets():
    rng = np.random.default_rng(0)
    free = rng.random((32, 32)) > 0.2
    grid = binary_grid(free)
    for _ in range(200):
        fs = random_set(rng)
        assert min_ade(fs) == brute_ade(fs.samples, fs.gt_future)
        assert min_fde(fs) == brute_fde(fs.samples, fs.gt_future)
        assert ecfl(fs, grid, IDENT) == brute_ecfl(fs.samples, free)


def test_ade_fde_examples():
    gt = np.stack([np.arange(12.0), np.zeros(12)], axis=1)
    assert min_ade(ForecastSet("a", gt[None], gt)) == 0.0
    assert min_ade(ForecastSet("a", (gt + (1, 0))[None], gt)) == 1.0
    assert min_ade(ForecastSet("a", np.stack([gt + (1, 0), gt + (0.5, 0)]), gt)) == 0.5
    wild = gt * 7.0
    wild[-1] = gt[-1]
    assert min_fde(ForecastSet("a", wild[None], gt)) == 0.0
    final = gt.copy()
    final[-1] += (3, 4)
    assert min_fde(ForecastSet("a", final[None], gt)) == 5.0
    close = np.stack([gt + (1, 0), gt + (0.2, 0), gt - (3, 0)])
    assert min_fde(ForecastSet("a", close, gt)) == pytest.approx(0.2)


def test_kde_hand_example():
    fs = ForecastSet("k", np.array([[[-1.0, 0.0]], [[1.0, 0.0]]]), np.array([[0.0, 0.0]]))
    expected = -math.log(math.exp(-0.5) / (2 * math.pi))
    assert kde_nll(fs, bandwidth=1.0) == pytest.approx(expected, abs=1e-12)
    assert kde_nll(fs, bandwidth=1.0) == pytest.approx(2.3379, abs=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_kde_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    fs = random_set(rng, k=int(rng.integers(3, 20)), t_f=4)
    ref = -np.mean([gaussian_kde(fs.samples[:, t].T).logpdf(fs.gt_future[t])[0] for t in range(4)])
    assert kde_nll(fs) == pytest.approx(ref, rel=1e-9)


def test_kde_mode_and_mean_over_steps():
    samples = np.random.default_rng(1).normal(0, 1, size=(20, 1, 2))
    at_mode = ForecastSet("m", samples, np.zeros((1, 2)))
    far = ForecastSet("m", samples, np.array([[6.0, 6.0]]))
    assert kde_nll(at_mode, 0.5) < kde_nll(far, 0.5)
    two = ForecastSet("m", np.concatenate([samples, samples], axis=1), np.zeros((2, 2)))
    assert kde_nll(two, 0.5) == pytest.approx(kde_nll(at_mode, 0.5))


@given(st.integers(0, 10_000))
def test_kde_improves_toward_cluster(seed):
    rng = np.random.default_rng(seed)
    cluster = rng.normal(0, 0.1, size=(12, 1, 2)) + rng.uniform(-5, 5, size=2)
    center = cluster.mean(axis=(0, 1))
    start = center + rng.normal(0, 1, size=2) * 5 + 4
    path = [start + a * (center - start) for a in np.linspace(0, 1, 5)]
    vals = [kde_nll(ForecastSet("c", cluster, p[None]), bandwidth=0.5) for p in path]
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))


def test_kde_degenerate_falls_back():
    gt = np.zeros((3, 2))
    fs = ForecastSet("d", np.zeros((4, 3, 2)), gt)
    with pytest.warns(BandwidthFallbackWarning):
        v = kde_nll(fs)
    assert v == pytest.approx(math.log(2 * math.pi * 0.04))
    with pytest.warns(BandwidthFallbackWarning):
        assert kde_nll(ForecastSet("d", np.zeros((1, 3, 2)), gt)) == pytest.approx(v)
    line = np.zeros((5, 1, 2))
    line[:, 0, 0] = np.arange(5)
    with pytest.warns(BandwidthFallbackWarning):
        assert math.isfinite(kde_nll(ForecastSet("d", line, np.zeros((1, 2)))))


@given(st.integers(0, 10_000), st.floats(-100, 100), st.floats(-100, 100))
def test_translation_invariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    fs = random_set(rng, k=int(rng.integers(2, 9)))
    moved = ForecastSet("s", fs.samples + (dx, dy), fs.gt_future + (dx, dy))
    assert min_ade(moved) == pytest.approx(min_ade(fs), abs=1e-9)
    assert min_fde(moved) == pytest.approx(min_fde(fs), abs=1e-9)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BandwidthFallbackWarning)
        assert kde_nll(moved) == pytest.approx(kde_nll(fs), rel=1e-6, abs=1e-6)


def test_ecfl_examples_and_invariances(open_room):
    gt = np.stack([np.arange(5, 17.0), np.full(12, 10.0)], axis=1)
    assert ecfl(ForecastSet("e", np.stack([gt, gt + 1]), gt), open_room, IDENT) == 100.0
    hit = gt.copy()
    hit[2] = (0, 0)  # wall cell at t=3
    assert ecfl(ForecastSet("e", np.stack([gt, hit]), gt), open_room, IDENT) == 50.0
    out = gt.copy()
    out[5] = (100, 10)
    assert ecfl(ForecastSet("e", out[None], gt), open_room, IDENT) == 0.0
    rng = np.random.default_rng(2)
    samples = rng.uniform(-2, 66, size=(6, 12, 2))
    base = ecfl(ForecastSet("e", samples, gt), open_room, IDENT)
    assert ecfl(ForecastSet("e", samples[::-1], gt), open_room, IDENT) == base
    assert ecfl(ForecastSet("e", np.concatenate([samples, samples]), gt), open_room, IDENT) == base


def test_forecast_set_validation():
    with pytest.raises(ValueError):
        ForecastSet("x", np.zeros((0, 12, 2)), np.zeros((12, 2)))
    with pytest.raises(ValueError):
        ForecastSet("x", np.zeros((2, 11, 2)), np.zeros((12, 2)))


def test_report_round_trip(tmp_path, open_room):
    rep = MetricReport(k=5)
    rng = np.random.default_rng(4)
    for i in range(3):
        fs = random_set(rng, k=5, t_f=12)
        rep.add(f"s{i}", scene_metrics(fs, open_room, IDENT))
    assert set(rep.aggregate) == set(METRICS)
    rep.write_csv(tmp_path / "m.csv")
    header = (tmp_path / "m.csv").read_text().splitlines()[0]
    assert header == "scene_id,k,min_ade,min_fde,kde_nll,ecfl"
    rows = read_metric_csv(tmp_path / "m.csv")
    assert [r["scene_id"] for r in rows] == ["s0", "s1", "s2"]
    assert rows[1]["min_ade"] == pytest.approx(rep.per_scene["s1"]["min_ade"], abs=1e-6)
    assert rep.to_json() == rep.to_json()
