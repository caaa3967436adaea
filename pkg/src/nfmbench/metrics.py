"""Threshold-free and threshold-dependent evaluation of score streams.

Abnormal is the positive class throughout; a sample is predicted abnormal
when its score is ``>=`` the operating threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError
from .manifest import category_view
from .tensor_io import ScoreTable

THRESHOLD_POLICIES = ("max_f1", "youden")


def _as_scores(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValidationError(f"{name} scores are empty")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} scores contain non-finite values")
    return arr


def _auroc_ranked(normal: np.ndarray, abnormal: np.ndarray) -> float:
    """Mann-Whitney AUROC from mid-ranks of the pooled scores."""
    n0, n1 = normal.size, abnormal.size
    ranks = rankdata(np.concatenate([normal, abnormal]), method="average")
    r1 = ranks[n0:].sum()
    return (r1 - n1 * (n1 + 1) / 2.0) / (n0 * n1)


def auroc(normal_scores, abnormal_scores) -> float:
    """P(abnormal score > normal score), ties counting one half.

    Computed from average ranks in O(n log n).
    """
    n = _as_scores(normal_scores, "normal")
    a = _as_scores(abnormal_scores, "abnormal")
    return float(_auroc_ranked(n, a))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))

    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def roc_points(normal_scores, abnormal_scores) -> RocCurve:
    """One ROC point per distinct score (threshold ``>=`` score), preceded by
    ``(0, 0)`` at threshold ``+inf``. The last point is ``(1, 1)``."""
    n = _as_scores(normal_scores, "normal")
    a = _as_scores(abnormal_scores, "abnormal")
    scores = np.concatenate([n, a])
    pos = np.concatenate([np.zeros(n.size), np.ones(a.size)])
    order = np.argsort(-scores, kind="stable")
    scores, pos = scores[order], pos[order]
    tp = np.cumsum(pos)
    fp = np.cumsum(1.0 - pos)
    last = np.r_[np.flatnonzero(np.diff(scores) != 0), scores.size - 1]
    fpr = np.r_[0.0, fp[last] / n.size]
    tpr = np.r_[0.0, tp[last] / a.size]
    thr = np.r_[np.inf, scores[last]]
    return RocCurve(fpr, tpr, thr)


@dataclass(frozen=True)
class CiEstimate:
    point: float
    lo: float
    hi: float
    n_resamples: int
    seed: int

    @property
    def contains_point(self) -> bool:
        return self.lo <= self.point <= self.hi

    def to_dict(self) -> dict:
        return {"point": self.point, "lo": self.lo, "hi": self.hi,
                "n_resamples": self.n_resamples, "seed": self.seed,
                "contains_point": self.contains_point}


def _resample_indices(n0: int, n1: int, n_resamples: int, seed: int):
    children = np.random.SeedSequence(seed).spawn(n_resamples)
    idx_n = np.empty((n_resamples, n0), dtype=np.int64)
    idx_a = np.empty((n_resamples, n1), dtype=np.int64)
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        idx_n[i] = rng.integers(0, n0, n0)
        idx_a[i] = rng.integers(0, n1, n1)
    return idx_n, idx_a


def bootstrap_aurocs(normal_scores, abnormal_scores, n_resamples: int, seed: int) -> np.ndarray:
    """AUROC of each stratified bootstrap resample.

    Resample ``i`` draws with replacement within each class from its own
    generator, ``SeedSequence(seed).spawn(n)[i]``, so values do not depend
    on how resamples are scheduled.

    Instead of re-ranking every resample, normals are sorted once; a
    resample's pair count is then read off cumulative normal multiplicities
    at each abnormal score's insertion points.
    """
    n = _as_scores(normal_scores, "normal")
    a = _as_scores(abnormal_scores, "abnormal")
    n0, n1 = n.size, a.size
    idx_n, idx_a = _resample_indices(n0, n1, n_resamples, seed)
    order = np.argsort(n, kind="stable")
    pos = np.empty(n0, dtype=np.int64)
    pos[order] = np.arange(n0)
    sorted_n = n[order]
    below = np.searchsorted(sorted_n, a, side="left")
    upto = np.searchsorted(sorted_n, a, side="right")

    out = np.empty(n_resamples)
    step = max(1, 4_000_000 // (n0 + n1 + 1))
    for lo in range(0, n_resamples, step):
        hi = min(n_resamples, lo + step)
        r = hi - lo
        flat = (np.arange(r)[:, None] * n0 + pos[idx_n[lo:hi]]).ravel()
        counts = np.bincount(flat, minlength=r * n0).reshape(r, n0)
        cum = np.zeros((r, n0 + 1))
        np.cumsum(counts, axis=1, out=cum[:, 1:])
        # wins (normal strictly below) plus half of ties, per original abnormal
        per_abn = 0.5 * (cum[:, below] + cum[:, upto])
        out[lo:hi] = np.take_along_axis(per_abn, idx_a[lo:hi], axis=1).sum(axis=1)
    return out / (n0 * n1)


def bootstrap_ci(normal_scores, abnormal_scores, n_resamples: int = 1000,
                 seed: int = 0, level: float = 0.95) -> CiEstimate:
    """Percentile bootstrap interval for the AUROC (2.5 / 97.5 by default)."""
    if n_resamples < 100:
        raise ValidationError(f"n_resamples must be >= 100, got {n_resamples}")
    point = auroc(normal_scores, abnormal_scores)
    boots = bootstrap_aurocs(normal_scores, abnormal_scores, n_resamples, seed)
    tail = (1.0 - level) / 2.0 * 100.0
    lo, hi = np.percentile(boots, [tail, 100.0 - tail])
    return CiEstimate(point, float(lo), float(hi), int(n_resamples), int(seed))


@dataclass(frozen=True)
class ThresholdMetrics:
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def f1(self) -> float:
        den = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / den if den else 0.0

    @property
    def specificity(self) -> float:
        den = self.tn + self.fp
        return self.tn / den if den else 0.0

    @property
    def sensitivity(self) -> float:
        den = self.tp + self.fn
        return self.tp / den if den else 0.0

    def to_dict(self) -> dict:
        return {"threshold": _json_float(self.threshold), "f1": self.f1,
                "specificity": self.specificity, "sensitivity": self.sensitivity,
                "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def _json_float(x: float):
    # JSON has no infinities; the degenerate all-abnormal / all-normal
    # operating points are written as strings
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def threshold_metrics(normal_scores, abnormal_scores, threshold: float) -> ThresholdMetrics:
    n = np.asarray(normal_scores, dtype=np.float64)
    a = np.asarray(abnormal_scores, dtype=np.float64)
    tp = int(np.count_nonzero(a >= threshold))
    fp = int(np.count_nonzero(n >= threshold))
    return ThresholdMetrics(float(threshold), tp, fp, int(n.size - fp), int(a.size - tp))


def candidate_thresholds(scores) -> np.ndarray:
    """``-inf``, midpoints between adjacent distinct scores, ``+inf`` (ascending)."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    mids = u[:-1] + (u[1:] - u[:-1]) / 2.0
    return np.r_[-np.inf, mids, np.inf]


def select_threshold(scores, labels, policy: str = "max_f1") -> float:
    """Global operating threshold chosen on labelled validation scores.

    ``labels`` are booleans (True = abnormal) or the strings
    ``"normal"``/``"abnormal"``. ``max_f1`` maximises F1, ``youden``
    maximises sensitivity + specificity - 1; ties go to the lower threshold.
    """
    if policy not in THRESHOLD_POLICIES:
        raise ValidationError(f"policy must be one of {THRESHOLD_POLICIES}, got {policy!r}")
    s = np.asarray(scores, dtype=np.float64)
    y = np.array([lab == "abnormal" if isinstance(lab, str) else bool(lab) for lab in labels])
    if s.shape != y.shape:
        raise ValidationError("scores and labels differ in length")
    if y.all() or not y.any():
        raise ValidationError("threshold selection needs both normal and abnormal validation samples")
    best_t, best_v = None, -np.inf
    for t in candidate_thresholds(s):
        m = threshold_metrics(s[~y], s[y], t)
        v = m.f1 if policy == "max_f1" else m.sensitivity + m.specificity - 1.0
        if v > best_v:
            best_t, best_v = float(t), v
    return best_t


@dataclass
class EvalBlock:
    auroc: CiEstimate
    metrics: ThresholdMetrics
    n_normal: int
    n_abnormal: int
    seen: str = "na"
    roc: RocCurve | None = None

    def to_dict(self) -> dict:
        return {"auroc": self.auroc.to_dict(), "metrics": self.metrics.to_dict(),
                "n_normal": self.n_normal, "n_abnormal": self.n_abnormal, "seen": self.seen}


@dataclass
class EvalReport:
    stream_name: str
    threshold: float
    overall: EvalBlock
    per_category: dict[str, EvalBlock] = field(default_factory=dict)

    @property
    def averages(self) -> dict:
        """Unweighted means over abnormal categories."""
        blocks = list(self.per_category.values())
        if not blocks:
            return {"f1": float("nan"), "specificity": float("nan"),
                    "sensitivity": float("nan"), "auroc": float("nan")}
        return {
            "f1": float(np.mean([b.metrics.f1 for b in blocks])),
            "specificity": float(np.mean([b.metrics.specificity for b in blocks])),
            "sensitivity": float(np.mean([b.metrics.sensitivity for b in blocks])),
            "auroc": float(np.mean([b.auroc.point for b in blocks])),
        }

    def to_dict(self) -> dict:
        return {
            "stream": self.stream_name,
            "threshold": _json_float(self.threshold),
            "overall": self.overall.to_dict(),
            "per_category": {c: b.to_dict() for c, b in self.per_category.items()},
            "averages": self.averages,
        }


def evaluate(manifest, scores: ScoreTable, threshold: float,
             n_resamples: int = 1000, seed: int = 0) -> EvalReport:
    """Overall and per-category metrics of one stream on the test split.

    The same ``threshold`` is applied to every block, so all category rows
    share the overall specificity.
    """
    test = manifest.split("test")
    missing = [s.sample_id for s in test if s.sample_id not in scores.entries]
    if missing:
        raise ValidationError(
            f"stream {scores.stream_name!r} lacks scores for {len(missing)} test ids "
            f"(first: {', '.join(missing[:10])})"
        )
    normals = [s.sample_id for s in test if not s.is_abnormal]
    abnormals = [s.sample_id for s in test if s.is_abnormal]
    sn = scores.values(normals)
    sa = scores.values(abnormals)
    overall = EvalBlock(
        bootstrap_ci(sn, sa, n_resamples, seed),
        threshold_metrics(sn, sa, threshold),
        len(normals), len(abnormals), "na", roc_points(sn, sa),
    )
    report = EvalReport(scores.stream_name, float(threshold), overall)
    for cat, seen in manifest.categories("test"):
        _, ids = category_view(manifest, cat)
        sc = scores.values(ids)
        report.per_category[cat] = EvalBlock(
            bootstrap_ci(sn, sc, n_resamples, seed),
            threshold_metrics(sn, sc, threshold),
            len(normals), len(ids), seen,
        )
    return report
