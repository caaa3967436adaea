"""Synthetic two-cluster benchmark with one unseen anomaly category.

Feature rows are 16-dimensional: normals ~ N(0, I), the seen category
``E1`` ~ N(3 e1, I), the unseen category ``E2`` ~ N(3 e2, I). Default sizes
are 500 normal / 100 seen / 100 unseen samples, split as

============  =====  ==========  ====
category      train  validation  test
============  =====  ==========  ====
normal          300         100   100
E1 (seen)        50          25    25
E2 (unseen)       0           0   100
============  =====  ==========  ====

Each sample owns ``rows_per_sample`` feature rows drawn i.i.d. from its
class distribution (1 = image-level). The external detector is a stand-in
for a supervised model that only learned the seen anomaly: its score is the
mean first coordinate of the sample's rows, blind to the ``e2`` direction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor_io
from .manifest import DatasetManifest, SampleRecord, write_manifest
from .tensor_io import ScoreTable

DIM = 16
SHIFT = 3.0
FEATURE_FILE = "features.nfmb"

# (category, label, seen, direction, {split: count})
DEFAULT_LAYOUT = (
    ("normal", "normal", "na", None, {"train": 300, "validation": 100, "test": 100}),
    ("E1", "abnormal", "seen", 0, {"train": 50, "validation": 25, "test": 25}),
    ("E2", "abnormal", "unseen", 1, {"test": 100}),
)


@dataclass
class SyntheticData:
    manifest: DatasetManifest
    features: np.ndarray
    external: dict[str, ScoreTable]  # split -> external scores


def make_synthetic(seed: int, rows_per_sample: int = 1, layout=DEFAULT_LAYOUT,
                   dim: int = DIM, shift: float = SHIFT) -> SyntheticData:
    rng = np.random.default_rng(seed)
    samples, blocks = [], []
    ext: dict[str, dict[str, float]] = {"train": {}, "validation": {}, "test": {}}
    row = 0
    for category, label, seen, direction, counts in layout:
        for split in ("train", "validation", "test"):
            for i in range(counts.get(split, 0)):
                x = rng.standard_normal((rows_per_sample, dim)).astype(np.float32)
                if direction is not None:
                    x[:, direction] += np.float32(shift)
                sid = f"{category}-{split}-{i:04d}"
                samples.append(SampleRecord(sid, label, category, seen, split,
                                            "features", row, rows_per_sample))
                blocks.append(x)
                ext[split][sid] = float(x[:, 0].astype(np.float64).mean())
                row += rows_per_sample
    feats = np.concatenate(blocks, axis=0) if blocks else np.zeros((0, dim), np.float32)
    manifest = DatasetManifest("synthetic-two-cluster", dim, {"features": FEATURE_FILE}, tuple(samples))
    external = {s: ScoreTable(v, "external") for s, v in ext.items()}
    return SyntheticData(manifest, feats, external)


def write_synthetic(data: SyntheticData, out_dir) -> dict[str, Path]:
    """Write manifest, features and external score files; return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "manifest": out / "manifest.json",
        "features": out / FEATURE_FILE,
        "external_test": out / "external_test.csv",
        "external_validation": out / "external_validation.csv",
    }
    write_manifest(data.manifest, paths["manifest"])
    tensor_io.write_features(data.features, paths["features"])
    tensor_io.write_scores(data.external["test"], paths["external_test"])
    tensor_io.write_scores(data.external["validation"], paths["external_validation"])
    return paths
