"""Dataset ingestion, train/test splitting, preprocessing and batch generation.

A dataset is either a directory with one subdirectory per class name or a
CSV manifest of ``path,label[,split]`` rows. Class indices are fixed
alphabetically (``black`` = 0 ... ``yellow`` = 7).
"""

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .colorspace import ColorSpace, convert_array
from .errors import DatasetError, DuplicatePathError, ShapeError
from .ppm import read_image
from .tensor import load_tensor, rng_for

CLASS_NAMES = ("black", "blue", "cyan", "gray", "green", "red", "white", "yellow")
IMAGE_EXTENSIONS = (".ppm", ".jpg", ".jpeg", ".png", ".bmp")

# Sub-stream tags for seeded generators.
_SPLIT, _SHUFFLE, _AUGMENT, _SUBSAMPLE = 1, 2, 3, 4


@dataclass
class Record:
    path: str
    label: int
    split: str = None

    @property
    def class_name(self):
        return CLASS_NAMES[self.label]


@dataclass
class DatasetManifest:
    records: list
    seed: int = None
    mean_image: np.ndarray = None

    def __len__(self):
        return len(self.records)

    def subset(self, split):
        return [r for r in self.records if r.split == split]

    def labels(self, split=None):
        recs = self.records if split is None else self.subset(split)
        return np.array([r.label for r in recs], dtype=np.int64)


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray
    indices: np.ndarray = field(default=None)


def class_index(name):
    try:
        return CLASS_NAMES.index(str(name).strip().lower())
    except ValueError:
        raise DatasetError(f"unknown class {name!r}; expected one of {CLASS_NAMES}") from None


def _check_readable(path):
    if not os.path.isfile(path) or not os.access(path, os.R_OK):
        raise DatasetError(f"unreadable image: {path}")


def ingest(source):
    """Enumerate records from a class-per-directory root or a CSV manifest."""
    source = os.fspath(source)
    if os.path.isdir(source):
        records = _ingest_directory(source)
    elif os.path.isfile(source):
        records = _ingest_csv(source)
    else:
        raise DatasetError(f"dataset source not found: {source}")
    return DatasetManifest(records)


def _ingest_directory(root):
    records = []
    for entry in sorted(os.listdir(root)):
        full = os.path.join(root, entry)
        if not os.path.isdir(full):
            continue
        label = class_index(entry)
        for name in sorted(os.listdir(full)):
            path = os.path.join(full, name)
            if os.path.splitext(name)[1].lower() in IMAGE_EXTENSIONS:
                _check_readable(path)
                records.append(Record(path, label))
    records.sort(key=lambda r: r.path)
    return records


def _ingest_csv(manifest_path):
    base = os.path.dirname(os.path.abspath(manifest_path))
    records = []
    seen = set()
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[:2] == ["path", "label"]:
                continue
            if len(row) not in (2, 3):
                raise DatasetError(f"{manifest_path}: bad row {row!r}")
            path = row[0] if os.path.isabs(row[0]) else os.path.join(base, row[0])
            path = os.path.normpath(path)
            if path in seen:
                raise DuplicatePathError(f"duplicate path in manifest: {path}")
            seen.add(path)
            _check_readable(path)
            split = row[2].strip() if len(row) == 3 and row[2].strip() else None
            if split not in (None, "train", "test"):
                raise DatasetError(f"{path}: split must be train or test, got {split!r}")
            records.append(Record(path, class_index(row[1]), split))
    records.sort(key=lambda r: r.path)
    return records


def write_manifest(manifest, path):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "split"])
        for r in manifest.records:
            writer.writerow([os.path.relpath(r.path, base), r.class_name, r.split or ""])


def _by_class(records):
    groups = {label: [] for label in range(len(CLASS_NAMES))}
    for i, r in enumerate(records):
        groups[r.label].append(i)
    return groups


def split(manifest, seed=0):
    """Per-class seeded shuffle; the first ceil(n/2) of each class go to train."""
    records = [Record(r.path, r.label) for r in manifest.records]
    for label, idx in _by_class(records).items():
        if not idx:
            raise DatasetError(f"class {CLASS_NAMES[label]!r} has no examples")
        order = rng_for((seed, _SPLIT, label)).permutation(len(idx))
        n_train = math.ceil(len(idx) / 2)
        for rank, k in enumerate(order):
            records[idx[k]].split = "train" if rank < n_train else "test"
    return DatasetManifest(records, seed=seed)


def apply_split_file(manifest, split_path):
    """Pin an external split: CSV rows of ``path,split``."""
    assign = {}
    base = os.path.dirname(os.path.abspath(split_path))
    with open(split_path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if len(row) != 2 or row == ["path", "split"]:
                continue
            path = row[0] if os.path.isabs(row[0]) else os.path.join(base, row[0])
            assign[os.path.normpath(path)] = row[1].strip()
    records = []
    for r in manifest.records:
        if os.path.normpath(r.path) not in assign:
            raise DatasetError(f"split file has no entry for {r.path}")
        records.append(Record(r.path, r.label, assign[os.path.normpath(r.path)]))
    return DatasetManifest(records, seed=manifest.seed)


def subsample(manifest, fraction, seed=0):
    """Keep ``fraction`` of each class (at least one record), seeded."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    keep = []
    for label, idx in _by_class(manifest.records).items():
        if not idx:
            continue
        n = max(1, round(len(idx) * fraction))
        chosen = rng_for((seed, _SUBSAMPLE, label)).permutation(len(idx))[:n]
        keep.extend(idx[k] for k in chosen)
    records = [manifest.records[i] for i in sorted(keep)]
    return DatasetManifest(records, seed=manifest.seed)


# -------------------------------------------------------------- preprocessing


def _bilinear_axis(n_in, n_out):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(pixels, height, width=None):
    """Resize (C, H, W) with pixel-centre-aligned bilinear interpolation."""
    width = height if width is None else width
    pixels = np.asarray(pixels, dtype=np.float64)
    c, h, w = pixels.shape
    if (h, w) == (height, width):
        return pixels.copy()
    y0, y1, fy = _bilinear_axis(h, height)
    x0, x1, fx = _bilinear_axis(w, width)
    rows = pixels[:, y0] * (1 - fy)[None, :, None] + pixels[:, y1] * fy[None, :, None]
    return rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx


def preprocess_pixels(rgb, space, size=256):
    """Resize raw RGB (3, H, W) to size x size, then convert to ``space``."""
    return convert_array(resize_bilinear(rgb, size), ColorSpace.parse(space)).astype(np.float32)


def preprocess(record, space, size=256):
    path = record.path if isinstance(record, Record) else os.fspath(record)
    return preprocess_pixels(read_image(path), space, size)


class ImageSet:
    """Indexable view of one split: preprocessed images plus labels."""

    def __init__(self, labels, loader, size):
        self.labels = np.asarray(labels, dtype=np.int64)
        self._loader = loader
        self.size = size

    def __len__(self):
        return len(self.labels)

    def image(self, i):
        return self._loader(i)

    @classmethod
    def from_manifest(cls, manifest, split_name, space, size=256, cache=False):
        recs = manifest.records if split_name is None else manifest.subset(split_name)
        store = {}

        def load(i):
            if cache and i in store:
                return store[i]
            img = preprocess(recs[i], space, size)
            if cache:
                store[i] = img
            return img

        view = cls([r.label for r in recs], load, size)
        view.records = recs
        return view


class ArrayImageSet(ImageSet):
    """In-memory images, (N, 3, S, S), already in the working color space."""

    def __init__(self, images, labels):
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or images.shape[2] != images.shape[3]:
            raise ShapeError(f"images must be (N, 3, S, S), got {images.shape}")
        super().__init__(labels, images.__getitem__, images.shape[-1])
        self.images = images


def compute_mean_image(images):
    """Mean of every image in an :class:`ImageSet` (float64 accumulation)."""
    if len(images) == 0:
        raise DatasetError("cannot compute a mean image from an empty split")
    total = None
    for i in range(len(images)):
        img = images.image(i).astype(np.float64)
        total = img if total is None else total + img
    return (total / len(images)).astype(np.float32)


# ---------------------------------------------------------- batch generation


def augment_params(seed, iteration, batch_size, margin):
    """Crop origins (B, 2) uniform over [0, margin]^2 and mirror flags (B,)."""
    rng = rng_for((seed, _AUGMENT, iteration))
    origins = rng.integers(0, margin + 1, size=(batch_size, 2))
    mirror = rng.random(batch_size) < 0.5
    return origins, mirror


def train_indices(n, seed, iteration, batch_size):
    """Record indices for a training iteration: a fresh seeded shuffle each epoch."""
    positions = iteration * batch_size + np.arange(batch_size)
    epochs = positions // n
    out = np.empty(batch_size, dtype=np.int64)
    for epoch in np.unique(epochs):
        perm = rng_for((seed, _SHUFFLE, int(epoch))).permutation(n)
        mask = epochs == epoch
        out[mask] = perm[positions[mask] % n]
    return out


def crop(pixels, oy, ox, size, mirror=False):
    out = pixels[..., oy : oy + size, ox : ox + size]
    return out[..., ::-1] if mirror else out


def next_batch(images, mean_image, crop_size, batch_size, seed, iteration, mode="train"):
    """Mean-subtracted, cropped (and in train mode, mirrored) batch.

    Train mode samples records by a per-epoch seeded shuffle with random crop
    origin and 50% horizontal mirroring. Eval mode walks records in order with
    a single centre crop.
    """
    if mean_image is None:
        raise DatasetError("mean image missing; compute it from the train split first")
    n = len(images)
    if n == 0:
        raise DatasetError("no records in this split")
    margin = images.size - crop_size
    if margin < 0:
        raise ShapeError(f"crop {crop_size} larger than image {images.size}")
    if mode == "train":
        idx = train_indices(n, seed, iteration, batch_size)
        origins, mirror = augment_params(seed, iteration, batch_size, margin)
    else:
        idx = np.arange(iteration * batch_size, min(n, (iteration + 1) * batch_size))
        if idx.size == 0:
            raise DatasetError(f"eval batch {iteration} is past the end of the split")
        origins = np.full((len(idx), 2), margin // 2)
        mirror = np.zeros(len(idx), dtype=bool)
    out = np.empty((len(idx), 3, crop_size, crop_size), dtype=np.float32)
    for k, (i, (oy, ox), flip) in enumerate(zip(idx, origins, mirror)):
        centred = images.image(i) - mean_image
        out[k] = crop(centred, oy, ox, crop_size, flip)
    return Batch(out, images.labels[idx], idx)


def eval_batches(images, mean_image, crop_size, batch_size):
    for it in range(math.ceil(len(images) / batch_size)):
        yield next_batch(images, mean_image, crop_size, batch_size, 0, it, mode="eval")


# ------------------------------------------------------------- descriptor


@dataclass
class DatasetDescriptor:
    """Text file pointing the CLI at a prepared dataset."""

    manifest: str
    mean_image: str = ""
    color_space: str = "rgb"
    seed: int = 0
    resize_size: int = 256
    root: str = ""

    KEYS = ("root", "manifest", "mean_image", "color_space", "seed", "resize_size")

    @classmethod
    def load(cls, path):
        base = os.path.dirname(os.path.abspath(path))
        values = {}
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, _, value = (s.strip() for s in line.partition("="))
                if key not in cls.KEYS:
                    raise DatasetError(f"{path}: unknown descriptor key {key!r}")
                values[key] = value
        if "manifest" not in values:
            raise DatasetError(f"{path}: descriptor needs a manifest key")
        for key in ("manifest", "mean_image", "root"):
            if values.get(key) and not os.path.isabs(values[key]):
                values[key] = os.path.join(base, values[key])
        for key in ("seed", "resize_size"):
            if key in values:
                values[key] = int(values[key])
        return cls(**values)

    def save(self, path):
        base = os.path.dirname(os.path.abspath(path))
        with open(path, "w", encoding="utf-8") as fh:
            for key in self.KEYS:
                value = getattr(self, key)
                if key in ("manifest", "mean_image", "root") and value:
                    value = os.path.relpath(value, base)
                fh.write(f"{key} = {value}\n")

    def open(self):
        manifest = ingest(self.manifest)
        if any(r.split is None for r in manifest.records):
            manifest = split(manifest, self.seed)
        if self.mean_image and os.path.exists(self.mean_image):
            manifest.mean_image = load_tensor(self.mean_image)
        manifest.seed = self.seed
        return manifest
