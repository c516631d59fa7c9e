"""Dataset manifests, raw image files and the desk-scale synthetic generator.

A dataset directory holds ``manifest.tsv`` (columns: id, relative path,
split, comma-separated label ids) and one raw file per image containing
``S*S*3`` uint8 values in row-major (H, W, C) order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

SPLITS = ("train", "query", "database")
MANIFEST = "manifest.tsv"
HEADER = ("id", "path", "split", "labels")


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    split: str
    labels: frozenset


@dataclass
class DatasetSpec:
    root: Path
    records: list[ImageRecord]

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise DataError(f"duplicate record id {rec.id!r}; splits must be disjoint")
            seen.add(rec.id)
            if rec.split not in SPLITS:
                raise DataError(f"record {rec.id!r}: unknown split {rec.split!r}")
            if not rec.labels:
                raise DataError(f"record {rec.id!r}: empty label set")

    def split(self, name: str) -> list[ImageRecord]:
        return [r for r in self.records if r.split == name]

    def load(self, name: str) -> tuple[np.ndarray, list[frozenset]]:
        """uint8 images (n, S, S, 3) and label sets for one split."""
        recs = self.split(name)
        if not recs:
            raise DataError(f"{self.root}: split {name!r} is empty")
        images = np.stack([read_image(self.root / r.path) for r in recs])
        return images, [r.labels for r in recs]


def read_image(path: Path) -> np.ndarray:
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc.strerror}") from exc
    side = math.isqrt(raw.size // 3)
    if raw.size == 0 or side * side * 3 != raw.size:
        raise DataError(f"{path}: {raw.size} bytes is not a square RGB image")
    return raw.reshape(side, side, 3)


def to_float(images: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Map uint8 pixels to [-1, 1]."""
    return np.asarray(images, dtype=dtype) / 127.5 - 1.0


def load_dataset(root) -> DatasetSpec:
    root = Path(root)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise DataError(f"missing dataset manifest {manifest}")
    records = []
    with open(manifest, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or row[0].startswith("#") or tuple(row) == HEADER:
                continue
            if len(row) != 4:
                raise DataError(f"{manifest}:{lineno}: expected 4 tab-separated columns, got {len(row)}")
            rid, rel, split, labels = row
            try:
                label_set = frozenset(int(x) for x in labels.split(",") if x.strip())
            except ValueError as exc:
                raise DataError(f"{manifest}:{lineno}: labels must be integers, got {labels!r}") from exc
            records.append(ImageRecord(rid, rel, split, label_set))
    return DatasetSpec(root, records)


def write_dataset(root, images: dict[str, np.ndarray], records: list[ImageRecord]) -> DatasetSpec:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    with open(root / MANIFEST, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(HEADER)
        for rec in records:
            np.ascontiguousarray(images[rec.id], dtype=np.uint8).tofile(root / rec.path)
            w.writerow([rec.id, rec.path, rec.split, ",".join(str(x) for x in sorted(rec.labels))])
    return DatasetSpec(root, records)


def synth_images(labels: np.ndarray, side: int, rng: np.random.Generator, n_classes: int) -> np.ndarray:
    """Striped colour patterns; class sets colour, stripe orientation and frequency.

    Stripes are axis-aligned so horizontal flips and small crops keep the class
    signature intact.  Each image gets its own phase, contrast and pixel noise.
    """
    class_rng = np.random.default_rng(1234 + n_classes)
    colours = class_rng.uniform(-1.0, 1.0, size=(n_classes, 3))
    colours /= np.linalg.norm(colours, axis=1, keepdims=True)
    freqs = 2.0 + (np.arange(n_classes) // 2) % 4
    yy, xx = np.mgrid[0:side, 0:side] / side
    out = np.empty((len(labels), side, side, 3), dtype=np.uint8)
    for i, c in enumerate(labels):
        coord = xx if c % 2 == 0 else yy
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freqs[c] * coord + phase)
        img = 127.5 + 90.0 * rng.uniform(0.7, 1.0) * wave[..., None] * colours[c]
        img += rng.normal(0.0, 12.0, size=img.shape)
        out[i] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return out


def make_synthetic(
    root,
    n_classes: int = 2,
    train_per_class: int = 32,
    query_per_class: int = 8,
    database_per_class: int = 32,
    side: int = 32,
    seed: int = 0,
) -> DatasetSpec:
    """Generate and write a labelled synthetic dataset with train/query/database splits."""
    if n_classes < 1 or side < 4:
        raise DataError("need at least one class and a side of at least 4 pixels")
    rng = np.random.default_rng(seed)
    images: dict[str, np.ndarray] = {}
    records: list[ImageRecord] = []
    for split, per_class in (("train", train_per_class), ("query", query_per_class), ("database", database_per_class)):
        labels = np.repeat(np.arange(n_classes), per_class)
        pixels = synth_images(labels, side, rng, n_classes)
        for j, (lab, img) in enumerate(zip(labels, pixels)):
            rid = f"{split}_{j:05d}"
            images[rid] = img
            records.append(ImageRecord(rid, f"images/{rid}.rgb", split, frozenset([int(lab)])))
    return write_dataset(root, images, records)
