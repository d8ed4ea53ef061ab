"""DSC and ASSD against hand arithmetic and an independent brute-force
oracle (pure loops, no shared code with the module under test)."""

import csv
import math

import numpy as np
import pytest

from featsim.errors import ConfigError, ShapeError
from featsim.metrics import (aggregate, assd, dsc, evaluate_case, extract_surface,
                             format_mean_std, overall_means, summary_rows,
                             surface_mask, write_case_csv, write_summary_csv)


# independent reference implementations ------------------------------------

def oracle_surface(m):
    m = np.asarray(m, dtype=bool)
    h, w = m.shape
    pts = []
    for i in range(h):
        for j in range(w):
            if not m[i, j]:
                continue
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ni, nj = i + di, j + dj
                if not (0 <= ni < h and 0 <= nj < w) or not m[ni, nj]:
                    pts.append((i, j))
                    break
    return pts


def oracle_assd(a, b, spacing=(1.0, 1.0)):
    sa, sb = oracle_surface(a), oracle_surface(b)
    if not sa or not sb:
        return None
    sy, sx = spacing

    def directed(src, dst):
        total = 0.0
        for (i, j) in src:
            total += min(math.hypot((i - p) * sy, (j - q) * sx) for (p, q) in dst)
        return total

    return (directed(sa, sb) + directed(sb, sa)) / (len(sa) + len(sb))


# dsc -----------------------------------------------------------------------

def test_dsc_hand_cases():
    a = np.zeros((6, 6), dtype=bool)
    a[1:3, 1:3] = True
    assert dsc(a, a.copy()) == 1.0
    b = np.zeros((6, 6), dtype=bool)
    b[4:6, 4:6] = True
    assert dsc(a, b) == 0.0
    # |A|=4, |B|=4, |A&B|=2 -> 2*2/8
    c = np.zeros((6, 6), dtype=bool)
    c[1:3, 2:4] = True
    assert dsc(a, c) == 0.5


def test_dsc_empty_conventions():
    e = np.zeros((4, 4), dtype=bool)
    f = np.ones((4, 4), dtype=bool)
    assert dsc(e, e) == 1.0
    assert dsc(e, f) == 0.0
    assert dsc(f, e) == 0.0


def test_dsc_shape_mismatch():
    with pytest.raises(ShapeError):
        dsc(np.zeros((3, 3), dtype=bool), np.zeros((3, 4), dtype=bool))


# surfaces ------------------------------------------------------------------

def test_surface_single_pixel():
    m = np.zeros((5, 5), dtype=bool)
    m[2, 3] = True
    assert extract_surface(m).tolist() == [[2, 3]]


def test_surface_solid_square_drops_center():
    m = np.zeros((5, 5), dtype=bool)
    m[1:4, 1:4] = True
    got = {tuple(p) for p in extract_surface(m)}
    want = {(i, j) for i in range(1, 4) for j in range(1, 4)} - {(2, 2)}
    assert got == want


def test_surface_empty():
    assert extract_surface(np.zeros((4, 4), dtype=bool)).size == 0


def test_surface_image_border_counts_as_background():
    m = np.ones((4, 4), dtype=bool)
    got = {tuple(p) for p in extract_surface(m)}
    want = {(i, j) for i in range(4) for j in range(4)
            if i in (0, 3) or j in (0, 3)}
    assert got == want


def test_surface_matches_oracle_on_random_masks():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        m = rng.random((rng.integers(3, 12), rng.integers(3, 12))) < 0.4
        assert {tuple(p) for p in extract_surface(m)} == set(oracle_surface(m))


def test_surface_rejects_non_2d():
    with pytest.raises(ShapeError):
        surface_mask(np.zeros((2, 3, 4), dtype=bool))


# assd ----------------------------------------------------------------------

def test_assd_identical_masks_zero():
    m = np.zeros((8, 8), dtype=bool)
    m[2:6, 3:7] = True
    assert assd(m, m.copy()) == 0.0
    assert assd(m, m.copy(), method="exact") == 0.0


def test_assd_single_pixels_three_apart():
    a = np.zeros((8, 8), dtype=bool)
    b = np.zeros((8, 8), dtype=bool)
    a[4, 1] = True
    b[4, 4] = True
    assert assd(a, b) == pytest.approx(3.0)
    assert assd(a, b, method="exact") == pytest.approx(3.0)
    # halving the spacing halves the distance
    assert assd(a, b, spacing=(0.5, 0.5)) == pytest.approx(1.5)


def test_assd_anisotropic_spacing():
    a = np.zeros((8, 8), dtype=bool)
    b = np.zeros((8, 8), dtype=bool)
    a[1, 4] = True
    b[4, 4] = True
    # 3 rows apart, row spacing 2mm
    assert assd(a, b, spacing=(2.0, 1.0)) == pytest.approx(6.0)
    assert assd(a, b, spacing=(2.0, 1.0), method="exact") == pytest.approx(6.0)


def test_assd_empty_mask_is_undefined():
    m = np.zeros((6, 6), dtype=bool)
    n = np.zeros((6, 6), dtype=bool)
    n[2, 2] = True
    assert assd(m, n) is None
    assert assd(n, m) is None
    assert assd(m, m) is None


def test_assd_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a = rng.random((10, 10)) < 0.3
        b = rng.random((10, 10)) < 0.3
        if not (a.any() and b.any()):
            continue
        assert assd(a, b) == pytest.approx(assd(b, a), rel=1e-12)


def test_assd_fast_path_matches_independent_oracle():
    rng = np.random.default_rng(123)
    checked = 0
    while checked < 60:
        h = int(rng.integers(2, 33))
        w = int(rng.integers(2, 33))
        a = rng.random((h, w)) < rng.uniform(0.05, 0.6)
        b = rng.random((h, w)) < rng.uniform(0.05, 0.6)
        sy, sx = rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)
        want = oracle_assd(a, b, (sy, sx))
        got_edt = assd(a, b, (sy, sx))
        got_exact = assd(a, b, (sy, sx), method="exact")
        if want is None:
            assert got_edt is None and got_exact is None
        else:
            assert got_edt == pytest.approx(want, abs=1e-6)
            assert got_exact == pytest.approx(want, abs=1e-6)
        checked += 1


def test_assd_grows_with_separation():
    vals = []
    for offset in (0, 2, 4):
        a = np.zeros((12, 12), dtype=bool)
        b = np.zeros((12, 12), dtype=bool)
        a[2:5, 2:5] = True
        b[2:5, 2 + offset:5 + offset] = True
        vals.append(assd(a, b))
    assert vals[0] == 0.0 and vals[0] < vals[1] < vals[2]


def test_assd_rejects_bad_inputs():
    m = np.zeros((4, 4), dtype=bool)
    with pytest.raises(ShapeError):
        assd(m, np.zeros((4, 5), dtype=bool))
    with pytest.raises(ConfigError):
        assd(m, m, spacing=(0.0, 1.0))
    with pytest.raises(ConfigError):
        assd(m, m, method="fancy")


# case evaluation and aggregation -------------------------------------------

def test_evaluate_case_perfect_prediction():
    gt = np.zeros((8, 8), dtype=np.uint8)
    gt[1:3, 1:3] = 1
    gt[4:6, 1:3] = 2
    gt[1:3, 5:7] = 3
    rep = evaluate_case(gt.copy(), gt)
    for c in (1, 2, 3):
        assert rep[c]["dsc"] == 1.0
        assert rep[c]["assd"] == 0.0


def test_evaluate_case_absent_class_conventions():
    gt = np.zeros((6, 6), dtype=np.uint8)
    gt[1:3, 1:3] = 1
    pred = np.zeros((6, 6), dtype=np.uint8)
    rep = evaluate_case(pred, gt)
    assert rep[1]["dsc"] == 0.0 and rep[1]["assd"] is None
    # class 2 absent from both sides
    assert rep[2]["dsc"] == 1.0 and rep[2]["assd"] is None


def test_evaluate_case_rejects_unknown_ids_and_shapes():
    gt = np.zeros((4, 4), dtype=np.uint8)
    bad = gt.copy()
    bad[0, 0] = 7
    with pytest.raises(ConfigError):
        evaluate_case(bad, gt)
    with pytest.raises(ShapeError):
        evaluate_case(np.zeros((4, 5), dtype=np.uint8), gt)


def _rep(d1, a1):
    return {1: {"dsc": d1, "assd": a1},
            2: {"dsc": 1.0, "assd": 0.0},
            3: {"dsc": 0.5, "assd": None}}


def test_aggregate_population_stats_and_assd_exclusion():
    reports = [_rep(0.8, 2.0), _rep(1.0, None)]
    agg = aggregate(reports)
    assert agg[1]["dsc_mean"] == pytest.approx(0.9)
    assert agg[1]["dsc_std"] == pytest.approx(0.1)      # population std
    assert agg[1]["assd_mean"] == pytest.approx(2.0)
    assert agg[1]["n_cases"] == 2 and agg[1]["n_assd"] == 1
    assert agg[3]["assd_mean"] is None and agg[3]["n_assd"] == 0


def test_overall_means_pool_classes_and_cases():
    reports = [_rep(0.8, 2.0), _rep(1.0, None)]
    mean_dsc, mean_assd = overall_means(reports)
    # dsc pool: 0.8,1.0,0.5 and 1.0,1.0,0.5 ; assd pool: 2.0,0.0 and 0.0
    assert mean_dsc == pytest.approx(np.mean([0.8, 1.0, 0.5, 1.0, 1.0, 0.5]))
    assert mean_assd == pytest.approx(np.mean([2.0, 0.0, 0.0]))


def test_format_mean_std():
    assert format_mean_std(0.9, 0.1, 2) == "0.90±0.10"
    assert format_mean_std(94.63, 1.52, 1) == "94.6±1.5"
    assert format_mean_std(None, None, 2) == "n/a"


def test_summary_rows_units():
    agg = {1: {"dsc_mean": 0.946, "dsc_std": 0.015,
               "assd_mean": 1.234, "assd_std": 0.567,
               "n_cases": 10, "n_assd": 10}}
    row = summary_rows(agg)[0]
    assert row["class"] == 1
    assert row["dsc_pct"] == "94.6±1.5"
    assert row["assd_mm"] == "1.23±0.57"


def test_csv_writers_roundtrip(tmp_path):
    reports = [_rep(0.8, 2.0), _rep(1.0, None)]
    case_path = tmp_path / "cases.csv"
    write_case_csv(case_path, ["c0", "c1"], reports)
    rows = list(csv.reader(open(case_path)))
    assert rows[0] == ["case", "class", "dsc", "assd"]
    assert len(rows) == 1 + 2 * 3
    assert rows[1][:3] == ["c0", "1", "0.800000"] and rows[1][3] == "2.000000"
    assert rows[4][0] == "c1"
    assert rows[3][3] == ""   # undefined assd stays blank

    sum_path = tmp_path / "summary.csv"
    write_summary_csv(sum_path, aggregate(reports))
    srows = list(csv.reader(open(sum_path)))
    assert srows[0] == ["class", "dsc_pct", "assd_mm", "n_cases", "n_assd"]
    assert [r[0] for r in srows[1:]] == ["1", "2", "3"]
    assert srows[1][3] == "2" and srows[1][4] == "1"
