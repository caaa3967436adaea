"""Normal feature memory: coreset construction and exact nearest neighbours.

Neighbour search is exact. Candidate rows are screened with a float32 GEMM
(``|q|^2 + |m|^2 - 2 q.m``) and a rounding-error margin, then every surviving
candidate is re-ranked with a direct float64 difference-of-squares distance.
Reported distances therefore never depend on block shapes, BLAS kernels or
the number of queries batched together.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_io
from .errors import FileFormatError, ValidationError

_EPS32 = float(np.finfo(np.float32).eps)
# screening block holds at most this many query x memory entries
_BLOCK_ELEMS = 1 << 22

BANK_FEATURES = "memory.nfmb"
BANK_SIDECAR = "memory.json"


def l2_rows(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Exact float64 L2 distance from ``query`` to each row of ``rows``.

    Each distance depends only on its own row and the query, so values are
    reproducible regardless of how many rows are passed at once.
    """
    diff = np.asarray(rows, dtype=np.float64) - np.asarray(query, dtype=np.float64)
    return np.sqrt(np.square(diff).sum(axis=1))


@dataclass(frozen=True)
class NeighborSet:
    indices: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.indices)


def _finish(cand: np.ndarray, memory64: np.ndarray, q64: np.ndarray, b: int):
    d = l2_rows(memory64[cand], q64)
    order = np.lexsort((cand, d))[:b]
    return cand[order], d[order]


class Screen:
    """Precomputed memory-side arrays for :func:`knn`.

    Rows are centred on the memory mean before the float32 screen so the
    error margin scales with the spread of the data, not its offset.
    """

    def __init__(self, memory):
        self.memory64 = np.asarray(memory, dtype=np.float64)
        self.center = self.memory64.mean(axis=0) if len(self.memory64) else 0.0
        centred = self.memory64 - self.center
        self.centred32 = centred.astype(np.float32)
        self.sqnorm = np.square(centred).sum(axis=1)
        self.max_sqnorm = float(self.sqnorm.max()) if len(self.sqnorm) else 0.0

    @property
    def rows(self) -> int:
        return self.memory64.shape[0]

    @property
    def dim(self) -> int:
        return self.memory64.shape[1]


def knn(queries, memory, b: int, screen: Screen | None = None):
    """Exact ``b`` nearest memory rows for each query row.

    Returns ``(indices, distances)`` arrays of shape ``(n_queries, min(b, M))``,
    sorted by distance with ties broken by the lower memory index.
    """
    if screen is None:
        screen = Screen(memory)
    queries = np.atleast_2d(np.asarray(queries))
    if queries.shape[1] != screen.dim:
        raise ValidationError(f"query dim {queries.shape[1]} != memory dim {screen.dim}")
    if b < 1:
        raise ValidationError(f"b must be >= 1, got {b}")
    n_mem, dim = screen.rows, screen.dim
    k = min(b, n_mem)
    nq = queries.shape[0]
    out_idx = np.empty((nq, k), dtype=np.int64)
    out_d = np.empty((nq, k), dtype=np.float64)
    if nq == 0:
        return out_idx, out_d
    q64 = queries.astype(np.float64)
    qc = q64 - screen.center
    q32 = qc.astype(np.float32)
    q_sqnorm = np.square(qc).sum(axis=1)
    # the float32 screen is off by at most ~(dim + 1) * eps * (|q|^2 + |m|^2)
    # (dot-product accumulation plus input rounding); use 4x that bound
    margins = 4.0 * (dim + 4) * _EPS32 * (q_sqnorm + screen.max_sqnorm) + 1e-300

    block = max(1, _BLOCK_ELEMS // max(n_mem, 1))
    for lo in range(0, nq, block):
        hi = min(nq, lo + block)
        approx = (q32[lo:hi] @ screen.centred32.T).astype(np.float64)
        approx *= -2.0
        approx += q_sqnorm[lo:hi, None]
        approx += screen.sqnorm[None, :]
        if k < n_mem:
            kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
        else:
            kth = approx.max(axis=1)
        limit = kth + 2.0 * margins[lo:hi]
        for r in range(hi - lo):
            cand = np.flatnonzero(approx[r] <= limit[r])
            out_idx[lo + r], out_d[lo + r] = _finish(cand, screen.memory64, q64[lo + r], k)
    return out_idx, out_d


def nearest_bruteforce(memory, query, b: int) -> NeighborSet:
    """Full-scan reference: exact distance to every row, stable sort."""
    d = l2_rows(memory, query)
    order = np.lexsort((np.arange(len(d)), d))[:b]
    return NeighborSet(order, d[order])


@dataclass
class MemoryBank:
    """Coreset-selected normal feature rows with provenance.

    ``source_ids[i]`` is the ``(sample_id, file_row)`` the i-th memory row was
    copied from. Rows are stored bitwise as in the source pool.
    """

    features: np.ndarray
    source_ids: list[tuple[str, int]]
    coreset_ratio: float = 1.0
    seed: int = 0
    _screen: Screen | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.features = tensor_io.as_feature_matrix(self.features)
        if self.features.shape[0] < 1:
            raise ValidationError("memory bank must hold at least one row")
        if len(self.source_ids) != self.features.shape[0]:
            raise ValidationError("source_ids length does not match memory rows")
        self.source_ids = [(str(s), int(r)) for s, r in self.source_ids]

    @property
    def rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def screen(self) -> Screen:
        if self._screen is None:
            self._screen = Screen(self.features)
        return self._screen

    @property
    def features64(self) -> np.ndarray:
        return self.screen.memory64

    def knn(self, queries, b: int):
        return knn(queries, self.features, b, screen=self.screen)

    def sidecar(self) -> dict:
        return {
            "source_ids": [[s, r] for s, r in self.source_ids],
            "coreset_ratio": self.coreset_ratio,
            "seed": self.seed,
            "dim": self.dim,
            "rows": self.rows,
        }


def nearest(bank: MemoryBank, query, b: int) -> NeighborSet:
    """Exact ``b`` nearest memory rows to one query vector (all rows if b > M)."""
    q = np.asarray(query)
    if q.ndim != 1:
        raise ValidationError(f"query must be a vector, got shape {q.shape}")
    if q.shape[0] != bank.dim:
        raise ValidationError(f"query dim {q.shape[0]} != memory dim {bank.dim}")
    idx, d = bank.knn(q[None, :], b)
    return NeighborSet(idx[0], d[0])


def coreset_size(n_rows: int, ratio: float) -> int:
    return max(1, int(np.floor(ratio * n_rows + 0.5)))


def k_center_greedy(pool, k: int, seed: int) -> np.ndarray:
    """Farthest-point selection of ``k`` pool rows, in selection order.

    The first row is drawn from ``default_rng(seed)``; each later step takes
    the row with the largest distance to its nearest already-selected row
    (lowest index on ties). Already-selected rows are never picked again, so
    duplicate rows are only chosen once coverage is exhausted.
    """
    pool64 = np.asarray(pool, dtype=np.float64)
    n = pool64.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    selected = [first]
    min_d = l2_rows(pool64, pool64[first])
    min_d[first] = -np.inf
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d))
        selected.append(nxt)
        np.minimum(min_d, l2_rows(pool64, pool64[nxt]), out=min_d)
        min_d[nxt] = -np.inf
    return np.array(selected, dtype=np.int64)


def build_memory(pool, ids, coreset_ratio: float = 1.0, seed: int = 0) -> MemoryBank:
    """Build the normal feature memory from a pool of normal feature rows.

    ``ids`` gives per-row provenance ``(sample_id, file_row)``. With
    ``coreset_ratio == 1`` the pool is kept verbatim; below 1,
    ``max(1, round(ratio * rows))`` rows are chosen by k-center greedy and
    stored in pool order.
    """
    pool = tensor_io.as_feature_matrix(pool)
    if pool.shape[0] < 1:
        raise ValidationError("cannot build a memory bank from an empty pool")
    if not 0.0 < coreset_ratio <= 1.0:
        raise ValidationError(f"coreset_ratio must lie in (0, 1], got {coreset_ratio}")
    ids = list(ids)
    if len(ids) != pool.shape[0]:
        raise ValidationError(f"{len(ids)} provenance ids for {pool.shape[0]} pool rows")
    if coreset_ratio == 1.0:
        keep = np.arange(pool.shape[0])
    else:
        k = coreset_size(pool.shape[0], coreset_ratio)
        keep = np.sort(k_center_greedy(pool, k, seed))
    return MemoryBank(pool[keep].copy(), [ids[i] for i in keep], float(coreset_ratio), int(seed))


def gather_pool(manifest, features: dict, sample_ids) -> tuple[np.ndarray, list[tuple[str, int]]]:
    """Stack the feature rows of ``sample_ids`` (in the given order) with provenance."""
    recs = manifest.by_id()
    blocks, prov = [], []
    for sid in sample_ids:
        rec = recs[sid]
        blocks.append(features[rec.file][rec.rows])
        prov.extend((sid, r) for r in range(rec.row_start, rec.row_start + rec.row_count))
    if not blocks:
        return np.zeros((0, manifest.dim), dtype=np.float32), []
    return np.concatenate(blocks, axis=0), prov


def save_bank(bank: MemoryBank, out_dir) -> None:
    """Persist as ``memory.nfmb`` plus the ``memory.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor_io.write_features(bank.features, out / BANK_FEATURES)
    (out / BANK_SIDECAR).write_text(json.dumps(bank.sidecar(), indent=1) + "\n", encoding="utf-8")


def load_bank(path) -> MemoryBank:
    """Load a bank from its directory (or from the sidecar JSON path)."""
    path = Path(path)
    side = path if path.suffix == ".json" else path / BANK_SIDECAR
    try:
        meta = json.loads(side.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{side}: invalid JSON: {exc}") from None
    feats = tensor_io.read_features(side.parent / BANK_FEATURES)
    try:
        rows, dim = int(meta["rows"]), int(meta["dim"])
        source = [(s, int(r)) for s, r in meta["source_ids"]]
        ratio, seed = float(meta["coreset_ratio"]), int(meta["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{side}: malformed sidecar: {exc}") from None
    if feats.shape != (rows, dim):
        raise FileFormatError(f"{side}: sidecar declares {rows}x{dim}, features are {feats.shape}")
    return MemoryBank(feats, source, ratio, seed)
