"""Reading and writing feature matrices (NFMB) and score tables (CSV).

NFMB layout, all little-endian::

    offset  size  field
    0       4     magic b"NFMB"
    4       4     version (u32, currently 1)
    8       8     rows (u64)
    16      8     dim (u64)
    24      4     reserved (u32, 0)
    28      ...   rows * dim float32 values, row-major

Feature matrices are plain ``numpy`` arrays of shape ``(rows, dim)`` and dtype
``float32``. Score tables are small dataclasses keyed by sample id.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FileFormatError, ValidationError

MAGIC = b"NFMB"
VERSION = 1
HEADER = struct.Struct("<4sIQQI")
HEADER_SIZE = HEADER.size  # 28
DTYPE = np.dtype("<f4")
SCORE_HEADER = ["sample_id", "score"]


def _first_nonfinite(data: np.ndarray) -> tuple[int, int] | None:
    bad = np.argwhere(~np.isfinite(data))
    if bad.size == 0:
        return None
    r, c = bad[0]
    return int(r), int(c)


def as_feature_matrix(data, dim: int | None = None) -> np.ndarray:
    """Coerce ``data`` to a validated ``(rows, dim)`` float32 array.

    Raises ``ValidationError`` for wrong rank, zero dimension or any
    non-finite element (the message names the offending row and column).
    """
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 1 and dim is not None and arr.size == 0:
        arr = arr.reshape(0, dim)
    if arr.ndim != 2:
        raise ValidationError(f"feature matrix must be 2-D, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise ValidationError("feature matrix must have dim >= 1")
    if dim is not None and arr.shape[1] != dim:
        raise ValidationError(f"expected dim {dim}, got {arr.shape[1]}")
    pos = _first_nonfinite(arr)
    if pos is not None:
        raise ValidationError(f"non-finite feature value at (row {pos[0]}, col {pos[1]})")
    return arr


def encode_features(matrix) -> bytes:
    arr = as_feature_matrix(matrix)
    rows, dim = arr.shape
    return HEADER.pack(MAGIC, VERSION, rows, dim, 0) + np.ascontiguousarray(arr, dtype=DTYPE).tobytes()


def write_features(matrix, path) -> None:
    """Write ``matrix`` as an NFMB file. Output is byte-deterministic."""
    Path(path).write_bytes(encode_features(matrix))


def read_header(path) -> tuple[int, int]:
    """Return ``(rows, dim)`` from an NFMB header without touching the payload."""
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE)
    return _parse_header(head, path)[:2]


def _parse_header(head: bytes, path) -> tuple[int, int, int]:
    if len(head) < HEADER_SIZE:
        raise FileFormatError(f"{path}: truncated header ({len(head)} bytes)")
    magic, version, rows, dim, _reserved = HEADER.unpack(head[:HEADER_SIZE])
    if magic != MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    if dim < 1:
        raise FileFormatError(f"{path}: dim must be >= 1")
    return rows, dim, HEADER_SIZE


def decode_features(buf: bytes, path="<bytes>") -> np.ndarray:
    rows, dim, offset = _parse_header(buf, path)
    expected = rows * dim * DTYPE.itemsize
    payload = len(buf) - offset
    if payload < expected:
        raise FileFormatError(f"{path}: truncated payload ({payload} of {expected} bytes)")
    if payload > expected:
        raise FileFormatError(f"{path}: {payload - expected} trailing bytes after payload")
    data = np.frombuffer(buf, dtype=DTYPE, count=rows * dim, offset=offset)
    data = data.reshape(rows, dim).astype(np.float32)  # native order, writable copy
    pos = _first_nonfinite(data)
    if pos is not None:
        raise FileFormatError(f"{path}: non-finite value at (row {pos[0]}, col {pos[1]})")
    return data


def read_features(path) -> np.ndarray:
    """Read an NFMB file into a ``(rows, dim)`` float32 array.

    Errors (all ``FileFormatError``): bad magic, version mismatch, truncated
    or oversized payload, NaN/Inf element.
    """
    return decode_features(Path(path).read_bytes(), path)


@dataclass
class ScoreTable:
    """Per-sample anomaly scores of one stream; higher means more anomalous."""

    entries: dict[str, float] = field(default_factory=dict)
    stream_name: str = "scores"

    def __post_init__(self):
        clean = {}
        for sid, s in self.entries.items():
            s = float(s)
            if not math.isfinite(s):
                raise ValidationError(f"non-finite score for {sid!r} in stream {self.stream_name!r}")
            clean[str(sid)] = s
        self.entries = clean

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, sample_id: str) -> float:
        return self.entries[sample_id]

    def ids(self) -> list[str]:
        return sorted(self.entries)

    def values(self, ids) -> np.ndarray:
        """Scores for ``ids`` in the given order; ``KeyError`` lists what is missing."""
        missing = [i for i in ids if i not in self.entries]
        if missing:
            raise KeyError(f"stream {self.stream_name!r} lacks scores for {missing[:10]}")
        return np.array([self.entries[i] for i in ids], dtype=np.float64)


def format_scores(table: ScoreTable) -> str:
    out = io.StringIO()
    out.write(",".join(SCORE_HEADER) + "\n")
    for sid in table.ids():
        # repr() is the shortest string that round-trips the float exactly
        out.write(f"{_csv_field(sid)},{table.entries[sid]!r}\n")
    return out.getvalue()


def _csv_field(value: str) -> str:
    if any(ch in value for ch in ',"\n\r'):
        return '"' + value.replace('"', '""') + '"'
    return value


def write_scores(table: ScoreTable, path) -> None:
    """Write ``sample_id,score`` CSV sorted by id, LF line endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_scores(table))


def parse_scores(text: str, stream_name: str, path="<text>") -> ScoreTable:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FileFormatError(f"{path}: empty score file (missing header)") from None
    if [h.strip() for h in header] != SCORE_HEADER:
        raise FileFormatError(f"{path}: expected header 'sample_id,score', got {header}")
    entries: dict[str, float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise FileFormatError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
        sid, raw = row
        try:
            score = float(raw)
        except ValueError:
            raise FileFormatError(f"{path}:{lineno}: malformed score {raw!r}") from None
        if not math.isfinite(score):
            raise FileFormatError(f"{path}:{lineno}: non-finite score for {sid!r}")
        if sid in entries:
            raise FileFormatError(f"{path}:{lineno}: duplicate sample id {sid!r}")
        entries[sid] = score
    return ScoreTable(entries, stream_name)


def read_scores(path, stream_name: str | None = None) -> ScoreTable:
    """Read a score CSV. The stream name defaults to the file stem."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_scores(text, stream_name or path.stem, path)
