"""Aggregate statistics over per-scan metrics.

Percentile bootstrap for confidence intervals (values are sorted before
resampling, so the CI depends only on the multiset and the seed), lesion-size
quartile stratification with rank boundaries ceil(n/4)/ceil(n/2)/ceil(3n/4),
and ordinary-least-squares regression of DSC on log10 lesion voxels.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    AllNonFiniteError,
    DegenerateXError,
    EmptyInputError,
    TooFewScansError,
)
from .metrics import ScanMetrics

METRIC_FIELDS = ("dsc", "mdsc", "hd_mm", "assd_mm", "tpr", "precision")


@dataclass
class BootstrapConfig:
    resamples: int = 10000
    confidence: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.resamples < 1:
            raise ValueError("resamples must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0,1)")


def bootstrap_ci(values, cfg):
    """(mean, ci_low, ci_high) of the finite values via percentile bootstrap."""
    vals = np.asarray(values, dtype=np.float64)
    finite = np.sort(vals[np.isfinite(vals)])
    if finite.size == 0:
        raise AllNonFiniteError("no finite values to aggregate")
    mean = float(finite.mean())
    rng = np.random.default_rng(cfg.seed)
    idx = rng.integers(0, finite.size, size=(cfg.resamples, finite.size))
    means = finite[idx].mean(axis=1)
    alpha = (1.0 - cfg.confidence) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return mean, float(lo), float(hi)


def aggregate(values, cfg):
    """Mean/median plus bootstrap CI, with non-finite values excluded and counted."""
    vals = np.asarray(values, dtype=np.float64)
    finite = vals[np.isfinite(vals)]
    n_excluded = int(vals.size - finite.size)
    if finite.size == 0:
        return {"mean": None, "median": None, "ci_low": None, "ci_high": None,
                "n_scans": 0, "n_excluded_nonfinite": n_excluded}
    mean, lo, hi = bootstrap_ci(finite, cfg)
    return {"mean": mean, "median": float(np.median(finite)),
            "ci_low": lo, "ci_high": hi,
            "n_scans": int(finite.size), "n_excluded_nonfinite": n_excluded}


def bootstrap_micro_dsc(confusions, cfg):
    """Pooled DSC with a scan-level bootstrap CI.

    confusions: (n, 3) array of per-scan (tp, fp, fn) counts.
    """
    c = np.asarray(confusions, dtype=np.float64)
    if c.size == 0:
        raise EmptyInputError("need at least one scan")
    denom = 2.0 * c[:, 0].sum() + c[:, 1].sum() + c[:, 2].sum()
    value = 1.0 if denom == 0 else 2.0 * c[:, 0].sum() / denom
    rng = np.random.default_rng(cfg.seed)
    idx = rng.integers(0, len(c), size=(cfg.resamples, len(c)))
    tp = c[idx, 0].sum(axis=1)
    den = 2.0 * tp + c[idx, 1].sum(axis=1) + c[idx, 2].sum(axis=1)
    scores = np.where(den == 0, 1.0, 2.0 * tp / np.maximum(den, 1.0))
    alpha = (1.0 - cfg.confidence) / 2.0
    lo, hi = np.quantile(scores, [alpha, 1.0 - alpha])
    return float(value), float(lo), float(hi)


def quartile_boundaries(n):
    return math.ceil(n / 4), math.ceil(n / 2), math.ceil(3 * n / 4)


GROUP_LABELS = ("0-25%", "25-50%", "50-75%", "75-100%")


def stratify_by_lesion_size(per_scan, cfg):
    """Partition scans into four lesion-size rank groups and aggregate each.

    Stable sort ascending by reference lesion voxels; boundary ranks are
    ceil(n/4), ceil(n/2), ceil(3n/4), so n=31 gives groups of 8/8/8/7.
    """
    n = len(per_scan)
    if n < 4:
        raise TooFewScansError(f"need at least 4 scans to stratify, got {n}")
    sizes = np.asarray([m.lesion_voxels_ref for m in per_scan])
    order = np.argsort(sizes, kind="stable")
    b1, b2, b3 = quartile_boundaries(n)
    groups = []
    for label, rank_slice in zip(GROUP_LABELS,
                                 (slice(0, b1), slice(b1, b2), slice(b2, b3), slice(b3, n))):
        members = [per_scan[i] for i in order[rank_slice]]
        entry = {
            "range": label,
            "n_scans": len(members),
            "lesion_voxels": [int(min(m.lesion_voxels_ref for m in members)),
                              int(max(m.lesion_voxels_ref for m in members))],
            "subject_ids": [m.subject_id for m in members],
            "aggregate": {f: aggregate([getattr(m, f) for m in members], cfg)
                          for f in METRIC_FIELDS},
        }
        groups.append(entry)
    return groups


def linear_fit(x, y):
    """OLS fit of y on x with intercept; returns (slope, intercept, r_squared)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise DegenerateXError("need two equal-length samples of size >= 2")
    sxx = np.sum((x - x.mean()) ** 2)
    if sxx == 0.0:
        raise DegenerateXError("x has zero variance")
    slope = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        return slope, intercept, 0.0
    sse = float(np.sum((y - (slope * x + intercept)) ** 2))
    return slope, intercept, 1.0 - sse / sst


def r_squared(x, y):
    return linear_fit(x, y)[2]


# ---------------------------------------------------------------------------
# evaluation report assembly


def _as_scan_metrics(per_scan):
    return [m if isinstance(m, ScanMetrics) else ScanMetrics.from_dict(m)
            for m in per_scan]


def build_report(per_scan, cfg, threshold=0.5):
    """Full evaluation report: per-scan records plus every aggregate block."""
    scans = _as_scan_metrics(per_scan)
    if not scans:
        raise EmptyInputError("no scans to report")

    agg = {f: aggregate([getattr(m, f) for m in scans], cfg) for f in METRIC_FIELDS}
    confusions = [(m.tp, m.fp, m.fn) for m in scans]
    micro, micro_lo, micro_hi = bootstrap_micro_dsc(confusions, cfg)
    agg["micro_dsc"] = {"mean": micro, "median": None, "ci_low": micro_lo,
                        "ci_high": micro_hi, "n_scans": len(scans),
                        "n_excluded_nonfinite": 0}

    report = {
        "schema_version": 1,
        "threshold": threshold,
        "bootstrap": {"resamples": cfg.resamples, "confidence": cfg.confidence,
                      "seed": cfg.seed},
        "n_scans": len(scans),
        "micro_dsc": micro,
        "aggregate": agg,
        "per_scan": [m.to_dict() for m in scans],
    }

    if len(scans) >= 4:
        report["stratified"] = stratify_by_lesion_size(scans, cfg)

    pos = [(math.log10(m.lesion_voxels_ref), m.dsc)
           for m in scans if m.lesion_voxels_ref > 0]
    if len(pos) >= 2 and len({x for x, _ in pos}) > 1:
        slope, intercept, r2 = linear_fit([x for x, _ in pos], [y for _, y in pos])
        report["regression"] = {"x": "log10_lesion_voxels_ref", "y": "dsc",
                                "slope": slope, "intercept": intercept,
                                "r_squared": r2, "n_scans": len(pos),
                                "n_excluded": len(scans) - len(pos)}
    else:
        report["regression"] = None
    return report


def verify_report(report):
    """Recompute every aggregate block from per_scan; returns discrepancy strings."""
    cfg = BootstrapConfig(**report["bootstrap"])
    rebuilt = build_report(report["per_scan"], cfg, threshold=report["threshold"])
    problems = []

    def compare(path, a, b):
        if isinstance(a, dict) and isinstance(b, dict):
            for k in sorted(set(a) | set(b)):
                compare(f"{path}.{k}", a.get(k), b.get(k))
        elif isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
            if len(a) != len(b):
                problems.append(f"{path}: length {len(a)} != {len(b)}")
            else:
                for i, (ae, be) in enumerate(zip(a, b)):
                    compare(f"{path}[{i}]", ae, be)
        elif a != b:
            problems.append(f"{path}: {a!r} != {b!r}")

    for key in ("micro_dsc", "aggregate", "stratified", "regression", "n_scans"):
        if key in report or key in rebuilt:
            compare(key, report.get(key), rebuilt.get(key))
    return problems


def build_comparison(report_a, report_b, label_a="A", label_b="B"):
    """Two-system comparison with per-metric mean deltas (B minus A)."""
    rows = {}
    for f in METRIC_FIELDS + ("micro_dsc",):
        a = report_a["aggregate"][f]["mean"]
        b = report_b["aggregate"][f]["mean"]
        rows[f] = {"a": a, "b": b,
                   "delta": None if a is None or b is None else b - a}
    return {"schema_version": 1,
            "labels": {"a": label_a, "b": label_b},
            "a": {"label": label_a, "micro_dsc": report_a["micro_dsc"],
                  "aggregate": report_a["aggregate"]},
            "b": {"label": label_b, "micro_dsc": report_b["micro_dsc"],
                  "aggregate": report_b["aggregate"]},
            "delta": {f: rows[f]["delta"] for f in rows}}


def format_value_ci(agg_entry, digits=2):
    """Render one aggregate as 'mean (lo-hi)', the table convention."""
    if agg_entry is None or agg_entry.get("mean") is None:
        return "n/a"
    mean, lo, hi = agg_entry["mean"], agg_entry["ci_low"], agg_entry["ci_high"]
    return f"{mean:.{digits}f} ({lo:.{digits}f}-{hi:.{digits}f})"
