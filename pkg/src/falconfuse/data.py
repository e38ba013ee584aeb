"""Dataset ingestion, preprocessing, stratified splitting, and batching.

Directory layout: ``<root>/<ClassName>/<file>.png`` (PNG or BMP), class
directory names matching the fixed class table exactly. Images of any
resolution are bilinear-resized to 128×128, scaled to [0, 1], then
normalized with mean 0.5 / std 0.5 per channel to [-1, 1].
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError
from .fusion import INPUT_SIZE
from .tensor import Tensor

logger = logging.getLogger("falconfuse")

CLASS_NAMES = ("Normal", "Liver", "Aspergillosis")
IMAGE_EXTENSIONS = (".png", ".bmp")
SPLITS = ("train", "val", "test")
NORM_MEAN = 0.5
NORM_STD = 0.5


@dataclass(frozen=True)
class ImageRecord:
    path: str
    class_id: int
    split: str = ""  # one of SPLITS once assigned


@dataclass
class DatasetManifest:
    records: List[ImageRecord]
    class_names: Sequence[str] = CLASS_NAMES
    seed: int = 0

    def split_records(self, split: str) -> List[ImageRecord]:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}; expected one of {SPLITS}")
        return [r for r in self.records if r.split == split]

    def class_counts(self, split: Optional[str] = None) -> Dict[int, int]:
        counts = {c: 0 for c in range(len(self.class_names))}
        for r in self.records:
            if split is None or r.split == split:
                counts[r.class_id] += 1
        return counts

    def __len__(self) -> int:
        return len(self.records)


def load_dataset(root_dir) -> DatasetManifest:
    """Scan one subdirectory per class name into a manifest.

    Unreadable image files are skipped with a logged warning count;
    a missing class directory or an empty class is a hard error.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    records: List[ImageRecord] = []
    skipped = 0
    for class_id, name in enumerate(CLASS_NAMES):
        class_dir = root / name
        if not class_dir.is_dir():
            raise DataError(f"missing class directory {class_dir}")
        n_before = len(records)
        for path in sorted(class_dir.iterdir()):
            if path.suffix.lower() not in IMAGE_EXTENSIONS:
                continue
            try:
                with Image.open(path) as img:
                    img.verify()
            except (UnidentifiedImageError, OSError):
                skipped += 1
                logger.warning("skipping unreadable image %s", path)
                continue
            records.append(ImageRecord(str(path), class_id))
        if len(records) == n_before:
            raise DataError(f"class {name!r} has no readable images in {class_dir}")
    if skipped:
        logger.warning("skipped %d unreadable files under %s", skipped, root)
    return DatasetManifest(records=records)


def stratified_split(
    manifest: DatasetManifest,
    train_frac: float = 0.8,
    val_frac_of_train: float = 0.1,
    seed: int = 0,
) -> DatasetManifest:
    """Assign splits per class with a seeded shuffle.

    Per class: floor((1-train_frac)*n) to test, then floor of
    val_frac_of_train of the remaining to val, remainder to train —
    each clamped to at least one record so every split sees every
    class. Classes need at least 3 records.
    """
    if not 0.0 < train_frac < 1.0:
        raise DataError(f"train_frac must be in (0, 1), got {train_frac}")
    if not 0.0 <= val_frac_of_train < 1.0:
        raise DataError(
            f"val_frac_of_train must be in [0, 1), got {val_frac_of_train}"
        )
    by_class: Dict[int, List[int]] = {}
    for idx, rec in enumerate(manifest.records):
        by_class.setdefault(rec.class_id, []).append(idx)
    assignments = [""] * len(manifest.records)
    for class_id, indices in sorted(by_class.items()):
        n = len(indices)
        if n < 3:
            raise DataError(
                f"class {manifest.class_names[class_id]!r} has only {n} records; "
                f"need at least 3 for train/val/test"
            )
        rng = np.random.Generator(
            np.random.Philox(counter=[class_id, 0, 0, 0], key=[seed & (2**64 - 1), 0x51])
        )
        order = [indices[i] for i in rng.permutation(n)]
        # epsilon guards against float dust like 200*0.2 -> 39.9999...
        n_test = max(1, int(n * (1.0 - train_frac) + 1e-9))
        n_val = max(1, int((n - n_test) * val_frac_of_train + 1e-9)) if val_frac_of_train > 0 else 0
        if n_test + n_val >= n:
            raise DataError(
                f"class {manifest.class_names[class_id]!r} too small ({n}) for the "
                f"requested fractions"
            )
        for i in order[:n_test]:
            assignments[i] = "test"
        for i in order[n_test : n_test + n_val]:
            assignments[i] = "val"
        for i in order[n_test + n_val :]:
            assignments[i] = "train"
    records = [replace(r, split=s) for r, s in zip(manifest.records, assignments)]
    return DatasetManifest(records=records, class_names=manifest.class_names, seed=seed)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of an H×W×C float array, half-pixel centers.

    Exact identity when the size already matches.
    """
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    sy = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0.0, in_h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0.0, in_w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (sy - y0)[:, None, None]
    fx = (sx - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def preprocess(image_file) -> np.ndarray:
    """Decode, resize to 128×128, and normalize to [-1, 1].

    Returns a float32 array of shape (3, 128, 128); grayscale inputs are
    replicated across the three channels.
    """
    path = Path(image_file)
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    arr = bilinear_resize(arr, INPUT_SIZE, INPUT_SIZE)
    arr = (arr - NORM_MEAN) / NORM_STD
    return np.ascontiguousarray(arr.transpose(2, 0, 1), dtype=np.float32)


class ImageCache:
    """Preprocessed-image store so epochs do not re-decode files."""

    def __init__(self):
        self._store: Dict[str, np.ndarray] = {}

    def get(self, path: str) -> np.ndarray:
        arr = self._store.get(path)
        if arr is None:
            arr = self._store[path] = preprocess(path)
        return arr

    def preload(self, manifest: DatasetManifest) -> "ImageCache":
        for rec in manifest.records:
            self.get(rec.path)
        return self


@dataclass
class Batch:
    images: Tensor  # B×3×128×128, normalized
    labels: List[int]


def batches(
    manifest: DatasetManifest,
    split: str,
    batch_size: int = 5,
    seed: int = 0,
    epoch: int = 0,
    cache: Optional[ImageCache] = None,
) -> Iterator[Batch]:
    """Yield batches over a split; the final partial batch is included.

    The train split is reshuffled per epoch from a (seed, epoch)-keyed
    stream; val and test keep manifest order every epoch.
    """
    if batch_size < 1:
        raise DataError(f"batch_size must be positive, got {batch_size}")
    records = manifest.split_records(split)
    if not records:
        raise DataError(f"split {split!r} is empty")
    if split == "train":
        rng = np.random.Generator(
            np.random.Philox(counter=[epoch, 0, 0, 0], key=[seed & (2**64 - 1), 0xB5])
        )
        records = [records[i] for i in rng.permutation(len(records))]
    cache = cache or ImageCache()
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        images = np.stack([cache.get(r.path) for r in chunk])
        yield Batch(images=Tensor(images), labels=[r.class_id for r in chunk])


def write_manifest_csv(manifest: DatasetManifest, path) -> None:
    """Sidecar CSV: header path,class_id,split; UTF-8 with LF endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "class_id", "split"])
        for rec in manifest.records:
            writer.writerow([rec.path, rec.class_id, rec.split])


def read_manifest_csv(path, class_names: Sequence[str] = CLASS_NAMES) -> DatasetManifest:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["path", "class_id", "split"]:
            raise DataError(
                f"manifest CSV {path} has header {reader.fieldnames}, "
                f"expected ['path', 'class_id', 'split']"
            )
        for row in reader:
            records.append(
                ImageRecord(row["path"], int(row["class_id"]), row["split"])
            )
    return DatasetManifest(records=records, class_names=class_names)
