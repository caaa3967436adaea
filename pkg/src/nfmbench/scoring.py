"""Memory-based anomaly scores and their fusion with an external detector.

For a sample with feature rows ``X`` and a memory ``M``:

* the representative row ``x*`` is the row of ``X`` farthest from the memory,
  ``m*`` its nearest memory row and ``d* = |x* - m*|``;
* the memory score is ``g = (1 - exp(d*) / sum_{m in N_b(m*)} exp|x* - m|) * d*``
  where ``N_b(m*)`` are the ``b`` memory rows nearest to ``m*`` (``m*`` itself
  included);
* the fused score averages ``g`` with an external stream, optionally after
  min-max calibration of both streams on validation scores.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import FileFormatError, ValidationError
from .memory_bank import MemoryBank, l2_rows
from .tensor_io import ScoreTable

EXP_CLAMP = 80.0
CALIBRATIONS = ("none", "minmax_validation")


@dataclass(frozen=True)
class FusionConfig:
    b: int = 3
    calibration: str = "none"
    weight: float = 0.5

    def __post_init__(self):
        if not isinstance(self.b, int) or self.b < 1:
            raise ValidationError(f"b must be a positive integer, got {self.b!r}")
        if self.calibration not in CALIBRATIONS:
            raise ValidationError(f"calibration must be one of {CALIBRATIONS}, got {self.calibration!r}")
        if not 0.0 <= self.weight <= 1.0:
            raise ValidationError(f"weight must lie in [0, 1], got {self.weight}")


@dataclass(frozen=True)
class PipelineConfig:
    """The JSON run configuration: ``{"b", "calibration", "weight",
    "coreset_ratio", "seed"}``; every key optional except where a command
    needs a seed."""

    b: int = 3
    calibration: str = "none"
    weight: float = 0.5
    coreset_ratio: float = 1.0
    seed: int | None = None

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig(self.b, self.calibration, self.weight)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        unknown = set(doc) - {"b", "calibration", "weight", "coreset_ratio", "seed"}
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.fusion  # validates b / calibration / weight
        if not 0.0 < float(cfg.coreset_ratio) <= 1.0:
            raise ValidationError(f"coreset_ratio must lie in (0, 1], got {cfg.coreset_ratio}")
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RepresentativeMatch:
    x_star: np.ndarray
    x_star_row: int
    m_star: int
    d_star: float


def _check_sample(rows, bank: MemoryBank) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows))
    if rows.shape[0] == 0:
        raise ValidationError("sample has no feature rows")
    if rows.shape[1] != bank.dim:
        raise ValidationError(f"sample dim {rows.shape[1]} != memory dim {bank.dim}")
    return rows


def select_representative(sample_rows, bank: MemoryBank) -> RepresentativeMatch:
    """Row of the sample with the largest nearest-memory distance.

    Ties go to the lowest sample row, then the lowest memory row.
    """
    rows = _check_sample(sample_rows, bank)
    idx, dist = bank.knn(rows, 1)
    return _pick(rows, idx[:, 0], dist[:, 0])


def _pick(rows, nn_idx, nn_dist) -> RepresentativeMatch:
    r = int(np.argmax(nn_dist))
    return RepresentativeMatch(np.asarray(rows[r]), r, int(nn_idx[r]), float(nn_dist[r]))


def reweight(d_star: float, neighbour_dists) -> float:
    """``(1 - exp(d*) / sum exp(d_m)) * d*`` in shifted form.

    Each term is ``exp(min(d_m - d*, 80))``; since ``d_m >= d*`` the sum is at
    least the neighbourhood size and the ratio at most ``1/b``.
    """
    if d_star == 0.0:
        return 0.0
    shifted = np.minimum(np.asarray(neighbour_dists, dtype=np.float64) - d_star, EXP_CLAMP)
    total = float(np.exp(shifted).sum())
    return max(0.0, (1.0 - 1.0 / total) * d_star)


def _warn_b(b: int) -> None:
    if b == 1:
        warnings.warn(
            "b=1: the neighbourhood is {m*} alone, so the memory score is identically 0",
            stacklevel=3,
        )


def memory_score(sample_rows, bank: MemoryBank, b: int = 3) -> float:
    """Reweighted memory anomaly score ``g >= 0`` of one sample."""
    if b < 1:
        raise ValidationError(f"b must be >= 1, got {b}")
    _warn_b(b)
    match = select_representative(sample_rows, bank)
    nb_idx, _ = bank.knn(bank.features[match.m_star][None, :], b)
    d_nb = l2_rows(bank.features64[nb_idx[0]], match.x_star)
    return reweight(match.d_star, d_nb)


def _score_chunk(rows: np.ndarray, offsets: np.ndarray, bank: MemoryBank, b: int) -> np.ndarray:
    """Scores for samples whose rows are ``rows[offsets[i]:offsets[i+1]]``."""
    n = len(offsets) - 1
    if n == 0:
        return np.zeros(0)
    nn_idx, nn_d = bank.knn(rows, 1)
    nn_idx, nn_d = nn_idx[:, 0], nn_d[:, 0]
    reps = []
    for i in range(n):
        lo, hi = offsets[i], offsets[i + 1]
        reps.append(_pick(rows[lo:hi], nn_idx[lo:hi], nn_d[lo:hi]))
    m_stars = np.unique([m.m_star for m in reps])
    nb_idx, _ = bank.knn(bank.features[m_stars], b)
    hood = dict(zip(m_stars.tolist(), nb_idx))
    mem64 = bank.features64
    out = np.empty(n)
    for i, m in enumerate(reps):
        out[i] = reweight(m.d_star, l2_rows(mem64[hood[m.m_star]], m.x_star))
    return out


def score_samples(sample_rows: list, bank: MemoryBank, b: int = 3, n_jobs: int = 1) -> np.ndarray:
    """Memory scores for a list of per-sample row blocks.

    Samples are split into ``n_jobs`` contiguous chunks scored on a thread
    pool. Every score depends only on its own sample and the bank, so the
    result is bitwise identical for any ``n_jobs``.
    """
    if b < 1:
        raise ValidationError(f"b must be >= 1, got {b}")
    _warn_b(b)
    blocks = [_check_sample(r, bank) for r in sample_rows]
    n = len(blocks)
    if n == 0:
        return np.zeros(0)
    bank.screen  # build the shared cache before threads start
    n_jobs = max(1, min(int(n_jobs), n))
    bounds = np.linspace(0, n, n_jobs + 1).astype(int)

    def run(lo_hi):
        lo, hi = lo_hi
        part = blocks[lo:hi]
        offsets = np.concatenate([[0], np.cumsum([len(p) for p in part])])
        return _score_chunk(np.concatenate(part, axis=0), offsets, bank, b)

    spans = list(zip(bounds[:-1], bounds[1:]))
    if n_jobs == 1:
        parts = [run(s) for s in spans]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(run, spans))
    return np.concatenate(parts)


def score_stream(manifest, features: dict, bank: MemoryBank, b: int = 3,
                 split: str = "test", n_jobs: int = 1) -> ScoreTable:
    """One memory score per sample of ``split``; stream name ``"nfm"``."""
    recs = sorted(manifest.split(split), key=lambda s: s.sample_id)
    blocks = []
    for s in recs:
        if s.file not in features:
            raise ValidationError(f"{s.sample_id}: feature file {s.file!r} not loaded")
        arr = features[s.file]
        if s.row_start + s.row_count > arr.shape[0]:
            raise ValidationError(f"{s.sample_id}: feature rows missing from {s.file!r}")
        blocks.append(arr[s.rows])
    scores = score_samples(blocks, bank, b, n_jobs=n_jobs)
    return ScoreTable({s.sample_id: float(v) for s, v in zip(recs, scores)}, "nfm")


def _id_mismatch(a: ScoreTable, b: ScoreTable) -> None:
    diff = sorted(set(a.entries) ^ set(b.entries))
    if diff:
        raise ValidationError(
            f"streams {a.stream_name!r} and {b.stream_name!r} cover different ids "
            f"({len(diff)} differ; first: {', '.join(diff[:10])})"
        )


def minmax_map(validation: ScoreTable):
    """Affine map sending the validation scores onto [0, 1].

    A zero-width validation range maps every score to 0.5 and warns.
    """
    vals = np.array(list(validation.entries.values()), dtype=np.float64)
    if vals.size == 0:
        raise ValidationError(f"calibration needs validation scores for {validation.stream_name!r}")
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo <= 0.0 or not math.isfinite(hi - lo):
        warnings.warn(
            f"stream {validation.stream_name!r}: validation scores have zero range; mapped to 0.5",
            stacklevel=2,
        )
        return lambda x: np.full_like(np.asarray(x, dtype=np.float64), 0.5)
    span = hi - lo
    return lambda x: (np.asarray(x, dtype=np.float64) - lo) / span


def fuse(nfm: ScoreTable, external: ScoreTable, config: FusionConfig | None = None,
         nfm_validation: ScoreTable | None = None,
         external_validation: ScoreTable | None = None) -> ScoreTable:
    """Weighted average of the memory stream and an external stream.

    With ``calibration="none"`` and weight 0.5 this is the plain midpoint
    ``(g + s_ext) / 2``. ``"minmax_validation"`` first rescales each stream so
    its validation scores span [0, 1].
    """
    config = config or FusionConfig()
    _id_mismatch(nfm, external)
    ids = nfm.ids()
    g = nfm.values(ids)
    e = external.values(ids)
    if config.calibration == "minmax_validation":
        if nfm_validation is None or external_validation is None:
            raise ValidationError("minmax_validation needs validation scores for both streams")
        g = minmax_map(nfm_validation)(g)
        e = minmax_map(external_validation)(e)
    w = config.weight
    fused = (g + e) / 2.0 if w == 0.5 else w * g + (1.0 - w) * e
    return ScoreTable(dict(zip(ids, fused.tolist())), "fused")
