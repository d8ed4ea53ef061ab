"""Segmentation metrics: DSC and ASSD with an exact brute-force reference.

ASSD runs on surface pixels (4-connectivity: foreground with a background
or out-of-bounds 4-neighbor). The default path uses an exact Euclidean
distance transform; the "exact" method does the full pairwise minimum and
exists as the oracle the fast path is validated against. Empty masks make
ASSD undefined and return None.
"""

import csv

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from .errors import ConfigError, ShapeError


def _as_bool(a):
    return np.asarray(a).astype(bool)


def dsc(a, b):
    a, b = _as_bool(a), _as_bool(b)
    if a.shape != b.shape:
        raise ShapeError(f"dsc shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def surface_mask(m):
    m = _as_bool(m)
    if m.ndim != 2:
        raise ShapeError(f"surface extraction needs a 2D mask, got {m.shape}")
    pad = np.pad(m, 1, constant_values=False)
    interior = m & pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    return m & ~interior


def extract_surface(m):
    """(N,2) row-major sorted coordinates of the boundary pixels."""
    return np.argwhere(surface_mask(m))


def _check_spacing(spacing):
    sy, sx = float(spacing[0]), float(spacing[1])
    if sy <= 0 or sx <= 0:
        raise ConfigError(f"pixel spacing must be positive, got {spacing}")
    return sy, sx


def assd(a, b, spacing=(1.0, 1.0), method="auto"):
    """Average symmetric surface distance in mm; None if either mask is empty."""
    a, b = _as_bool(a), _as_bool(b)
    if a.shape != b.shape:
        raise ShapeError(f"assd shapes differ: {a.shape} vs {b.shape}")
    sy, sx = _check_spacing(spacing)
    if method not in ("exact", "auto", "edt"):
        raise ConfigError(f"unknown assd method {method!r}")
    if not a.any() or not b.any():
        return None
    sa, sb = surface_mask(a), surface_mask(b)
    if method == "exact":
        pa = np.argwhere(sa).astype(np.float64) * (sy, sx)
        pb = np.argwhere(sb).astype(np.float64) * (sy, sx)
        d = cdist(pa, pb)
        total = d.min(axis=1).sum() + d.min(axis=0).sum()
    else:
        dt_b = ndimage.distance_transform_edt(~sb, sampling=(sy, sx))
        dt_a = ndimage.distance_transform_edt(~sa, sampling=(sy, sx))
        total = dt_b[sa].sum() + dt_a[sb].sum()
    return float(total / (sa.sum() + sb.sum()))


def evaluate_case(pred, gt, spacing=(1.0, 1.0), classes=(1, 2, 3)):
    """Per-class {'dsc', 'assd'}; a class absent from both sides scores
    DSC 1.0 with ASSD None."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"evaluate shapes differ: {pred.shape} vs {gt.shape}")
    present = set(np.unique(pred)) | set(np.unique(gt))
    known = set(int(c) for c in classes) | {0}
    unknown = present - known
    if unknown:
        raise ConfigError(f"label map contains unknown class ids {sorted(unknown)}")
    report = {}
    for c in classes:
        pa, ga = pred == c, gt == c
        report[int(c)] = {"dsc": dsc(pa, ga), "assd": assd(pa, ga, spacing)}
    return report


def aggregate(case_reports, classes=(1, 2, 3)):
    """Population mean/std per class across cases; ASSD skips undefined cases."""
    out = {}
    for c in classes:
        c = int(c)
        d = np.array([r[c]["dsc"] for r in case_reports], dtype=np.float64)
        a = np.array([r[c]["assd"] for r in case_reports if r[c]["assd"] is not None],
                     dtype=np.float64)
        out[c] = {
            "dsc_mean": float(d.mean()) if d.size else None,
            "dsc_std": float(d.std()) if d.size else None,
            "assd_mean": float(a.mean()) if a.size else None,
            "assd_std": float(a.std()) if a.size else None,
            "n_cases": int(d.size),
            "n_assd": int(a.size),
        }
    return out


def overall_means(case_reports, classes=(1, 2, 3)):
    """(mean DSC, mean ASSD) pooled over every class of every case."""
    ds, as_ = [], []
    for r in case_reports:
        for c in classes:
            ds.append(r[int(c)]["dsc"])
            if r[int(c)]["assd"] is not None:
                as_.append(r[int(c)]["assd"])
    return (float(np.mean(ds)) if ds else None,
            float(np.mean(as_)) if as_ else None)


def format_mean_std(mean, std, decimals):
    if mean is None:
        return "n/a"
    return f"{mean:.{decimals}f}±{std:.{decimals}f}"


def summary_rows(agg):
    """Report rows: DSC as percent with one decimal, ASSD in mm with two."""
    rows = []
    for c, s in sorted(agg.items()):
        dsc_txt = (format_mean_std(100.0 * s["dsc_mean"], 100.0 * s["dsc_std"], 1)
                   if s["dsc_mean"] is not None else "n/a")
        assd_txt = format_mean_std(s["assd_mean"], s["assd_std"], 2)
        rows.append({"class": c, "dsc_pct": dsc_txt, "assd_mm": assd_txt})
    return rows


def write_case_csv(path, case_ids, case_reports, classes=(1, 2, 3)):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["case", "class", "dsc", "assd"])
        for cid, rep in zip(case_ids, case_reports):
            for c in classes:
                a = rep[int(c)]["assd"]
                wr.writerow([cid, int(c), f"{rep[int(c)]['dsc']:.6f}",
                             "" if a is None else f"{a:.6f}"])


def write_summary_csv(path, agg):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["class", "dsc_pct", "assd_mm", "n_cases", "n_assd"])
        for c, s in sorted(agg.items()):
            row = summary_rows({c: s})[0]
            wr.writerow([c, row["dsc_pct"], row["assd_mm"], s["n_cases"], s["n_assd"]])
