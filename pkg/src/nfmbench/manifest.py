"""Dataset manifests, supervision-level partitioning and per-category views.

A manifest lists every sample with its label, anomaly category, seen/unseen
annotation, split and the rows of a feature file that hold its embeddings.
Image-level samples own one row, patch-level samples several.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_io
from .errors import FileFormatError, ValidationError

LABELS = ("normal", "abnormal")
SPLITS = ("train", "validation", "test")
SEEN_VALUES = ("seen", "unseen", "na")
NORMAL_CATEGORY = "normal"
SUPERVISION_LEVELS = ("unsupervised", "one_class", "semi", "fully")


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    label: str
    category: str
    seen: str
    split: str
    file: str
    row_start: int
    row_count: int = 1

    @property
    def is_abnormal(self) -> bool:
        return self.label == "abnormal"

    @property
    def rows(self) -> slice:
        return slice(self.row_start, self.row_start + self.row_count)

    def to_json(self) -> dict:
        return {
            "id": self.sample_id,
            "label": self.label,
            "category": self.category,
            "seen": self.seen,
            "split": self.split,
            "file": self.file,
            "row_start": self.row_start,
            "row_count": self.row_count,
        }


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    dim: int
    feature_files: dict[str, str]
    samples: tuple[SampleRecord, ...] = ()
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        _validate(self)

    def split(self, split: str) -> list[SampleRecord]:
        return [s for s in self.samples if s.split == split]

    def by_id(self) -> dict[str, SampleRecord]:
        return {s.sample_id: s for s in self.samples}

    def feature_path(self, key: str, features_dir=None) -> Path:
        root = Path(features_dir) if features_dir is not None else self.base_dir
        return root / self.feature_files[key]

    def load_features(self, features_dir=None) -> dict[str, np.ndarray]:
        """Read every referenced feature file, checking dim and row bounds."""
        out = {}
        for key in sorted(self.feature_files):
            arr = tensor_io.read_features(self.feature_path(key, features_dir))
            if arr.shape[1] != self.dim:
                raise ValidationError(
                    f"feature file {key!r} has dim {arr.shape[1]}, manifest declares {self.dim}"
                )
            out[key] = arr
        _check_row_bounds(self, {k: a.shape[0] for k, a in out.items()})
        return out

    def categories(self, split: str = "test") -> list[tuple[str, str]]:
        """Abnormal ``(category, seen)`` pairs in ``split``: seen first, then
        unseen, each in order of first appearance."""
        first: dict[str, str] = {}
        for s in self.samples:
            if s.split == split and s.is_abnormal and s.category not in first:
                first[s.category] = s.seen
        seen = [(c, f) for c, f in first.items() if f == "seen"]
        unseen = [(c, f) for c, f in first.items() if f != "seen"]
        return seen + unseen

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "feature_files": dict(sorted(self.feature_files.items())),
            "samples": [s.to_json() for s in self.samples],
        }


def _validate(m: DatasetManifest) -> None:
    if not isinstance(m.dim, int) or m.dim < 1:
        raise ValidationError(f"dim must be a positive integer, got {m.dim!r}")
    ids = set()
    for s in m.samples:
        if s.sample_id in ids:
            raise ValidationError(f"duplicate sample_id {s.sample_id!r}")
        ids.add(s.sample_id)
        if s.label not in LABELS:
            raise ValidationError(f"{s.sample_id}: label must be one of {LABELS}, got {s.label!r}")
        if s.split not in SPLITS:
            raise ValidationError(f"{s.sample_id}: split must be one of {SPLITS}, got {s.split!r}")
        if s.seen not in SEEN_VALUES:
            raise ValidationError(f"{s.sample_id}: seen must be one of {SEEN_VALUES}, got {s.seen!r}")
        if s.label == "normal":
            if s.category != NORMAL_CATEGORY or s.seen != "na":
                raise ValidationError(
                    f"{s.sample_id}: normal samples need category 'normal' and seen 'na'"
                )
        else:
            if s.category == NORMAL_CATEGORY or not s.category:
                raise ValidationError(f"{s.sample_id}: abnormal sample needs a disease category")
            if s.seen == "na":
                raise ValidationError(f"{s.sample_id}: abnormal sample must be 'seen' or 'unseen'")
        if s.file not in m.feature_files:
            raise ValidationError(f"{s.sample_id}: unknown feature file {s.file!r}")
        if s.row_start < 0 or s.row_count < 1:
            raise ValidationError(f"{s.sample_id}: bad row range ({s.row_start}, {s.row_count})")


def _check_row_bounds(m: DatasetManifest, file_rows: dict[str, int]) -> None:
    for s in m.samples:
        if s.row_start + s.row_count > file_rows[s.file]:
            raise ValidationError(
                f"{s.sample_id}: rows {s.row_start}..{s.row_start + s.row_count - 1} "
                f"exceed the {file_rows[s.file]} rows of {s.file!r}"
            )


def _record(obj: dict, where: str) -> SampleRecord:
    try:
        return SampleRecord(
            sample_id=str(obj["id"]),
            label=obj["label"],
            category=obj["category"],
            seen=obj["seen"],
            split=obj["split"],
            file=obj["file"],
            row_start=int(obj["row_start"]),
            row_count=int(obj.get("row_count", 1)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{where}: malformed sample entry: {exc}") from None


def manifest_from_json(doc: dict, base_dir=".", where="<manifest>") -> DatasetManifest:
    if not isinstance(doc, dict):
        raise FileFormatError(f"{where}: top level must be an object")
    missing = {"name", "dim", "feature_files", "samples"} - set(doc)
    if missing:
        raise FileFormatError(f"{where}: missing keys {sorted(missing)}")
    samples = [_record(o, f"{where} sample {i}") for i, o in enumerate(doc["samples"])]
    return DatasetManifest(
        name=str(doc["name"]),
        dim=doc["dim"],
        feature_files={str(k): str(v) for k, v in doc["feature_files"].items()},
        samples=tuple(samples),
        base_dir=Path(base_dir),
    )


def load_manifest(path, features_dir=None, check_files: bool = True) -> DatasetManifest:
    """Load and validate a manifest JSON file.

    Feature file paths resolve against ``features_dir`` (default: the
    manifest's directory). With ``check_files`` the NFMB headers are read to
    verify the shared dimension and that every referenced row exists.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: invalid JSON: {exc}") from None
    m = manifest_from_json(doc, base_dir=path.parent, where=str(path))
    if check_files:
        rows = {}
        for key in m.feature_files:
            n, d = tensor_io.read_header(m.feature_path(key, features_dir))
            if d != m.dim:
                raise ValidationError(f"feature file {key!r} has dim {d}, manifest declares {m.dim}")
            rows[key] = n
        _check_row_bounds(m, rows)
    return m


def write_manifest(manifest: DatasetManifest, path) -> None:
    text = json.dumps(manifest.to_json(), indent=1, sort_keys=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


@dataclass(frozen=True)
class SupervisionPartition:
    """Split of the training ids into N_x (labeled normal), A_x (labeled
    abnormal) and U_x (unlabeled). Id tuples are sorted."""

    labeled_normal_ids: tuple[str, ...]
    labeled_abnormal_ids: tuple[str, ...]
    unlabeled_ids: tuple[str, ...]
    seed: int

    @property
    def labeled_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.labeled_normal_ids + self.labeled_abnormal_ids))

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "labeled_normal": list(self.labeled_normal_ids),
            "labeled_abnormal": list(self.labeled_abnormal_ids),
            "unlabeled": list(self.unlabeled_ids),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SupervisionPartition":
        try:
            return cls(
                tuple(doc["labeled_normal"]),
                tuple(doc["labeled_abnormal"]),
                tuple(doc["unlabeled"]),
                int(doc["seed"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FileFormatError(f"malformed partition file: {exc}") from None


def partition_supervision(manifest: DatasetManifest, seed: int) -> SupervisionPartition:
    """Label floor(|train|/3) training samples, stratified by label.

    The labeled normal count is the rounded proportional share, so the class
    mix of the labeled subset tracks the training split to within one sample.
    Selection within each class is a seeded permutation of the id-sorted class
    members, so the result depends only on the sample set and ``seed``.
    """
    train = manifest.split("train")
    n = len(train)
    if n < 3:
        raise ValidationError(f"need at least 3 training samples to partition, got {n}")
    normals = sorted(s.sample_id for s in train if not s.is_abnormal)
    abnormals = sorted(s.sample_id for s in train if s.is_abnormal)
    k = n // 3
    k_norm = int(np.floor(k * len(normals) / n + 0.5))
    k_norm = min(max(k_norm, k - len(abnormals)), len(normals))
    k_abn = k - k_norm

    rng = np.random.default_rng(seed)
    pick_n = rng.permutation(len(normals))[:k_norm]
    pick_a = rng.permutation(len(abnormals))[:k_abn]
    ln = sorted(normals[i] for i in pick_n)
    la = sorted(abnormals[i] for i in pick_a)
    labeled = set(ln) | set(la)
    unl = sorted(s.sample_id for s in train if s.sample_id not in labeled)
    return SupervisionPartition(tuple(ln), tuple(la), tuple(unl), int(seed))


def supervision_view(
    manifest: DatasetManifest, partition: SupervisionPartition, level: str
) -> tuple[list[str], dict[str, str] | None]:
    """Training ids (and labels, where the regime sees them) for one
    supervision level.

    ``unsupervised`` uses N_x, A_x and U_x without labels; ``one_class`` uses
    N_x; ``semi`` uses N_x with labels plus U_x; ``fully`` uses N_x and A_x
    with labels. Labels of U_x members are never exposed.
    """
    if level == "unsupervised":
        ids = sorted(partition.labeled_ids + partition.unlabeled_ids)
        return ids, None
    if level == "one_class":
        ids = list(partition.labeled_normal_ids)
        return ids, {i: "normal" for i in ids}
    if level == "semi":
        ids = sorted(partition.labeled_normal_ids + partition.unlabeled_ids)
        return ids, {i: "normal" for i in partition.labeled_normal_ids}
    if level == "fully":
        labels = {i: "normal" for i in partition.labeled_normal_ids}
        labels.update({i: "abnormal" for i in partition.labeled_abnormal_ids})
        return sorted(labels), labels
    raise ValidationError(f"unknown supervision level {level!r}; expected one of {SUPERVISION_LEVELS}")


def category_view(manifest: DatasetManifest, category: str) -> tuple[list[str], list[str]]:
    """All test normals plus the test samples of one abnormal ``category``."""
    if category == NORMAL_CATEGORY:
        raise ValidationError("'normal' is not an abnormal category")
    test = manifest.split("test")
    abn = [s.sample_id for s in test if s.is_abnormal and s.category == category]
    if not abn:
        raise ValidationError(f"unknown category {category!r} in test split")
    normals = [s.sample_id for s in test if not s.is_abnormal]
    return normals, abn
