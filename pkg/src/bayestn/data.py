"""Dataset loading and preprocessing.

Pixels are stored as float64 in [0, 1]; integer 0-255 input is divided by
255 exactly once, on load.
"""
import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "DataFormatError",
    "load_idx",
    "load_csv",
    "load_split",
    "downsample",
    "pad",
    "pad_images",
    "subsample",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    n_classes: int = 10
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3:
            raise DataFormatError(f"images must be (N, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataFormatError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DataFormatError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataFormatError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def height(self):
        return self.images.shape[1]

    @property
    def width(self):
        return self.images.shape[2]

    def _derive(self, images=None, labels=None, step=None):
        prov = dict(self.provenance)
        if step is not None:
            prov["preprocessing"] = list(prov.get("preprocessing", [])) + [step]
        return replace(
            self,
            images=self.images if images is None else images,
            labels=self.labels if labels is None else labels,
            provenance=prov,
        )


def _read_idx(path, magic, ndims):
    raw = Path(path).read_bytes()
    header = 4 * (1 + ndims)
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    got = struct.unpack_from(">I", raw, 0)[0]
    if got != magic:
        raise DataFormatError(
            f"{path}: bad magic number 0x{got:08x} at offset 0, expected 0x{magic:08x}"
        )
    dims = struct.unpack_from(f">{ndims}I", raw, 4)
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < count:
        raise DataFormatError(
            f"{path}: truncated payload, expected {count} bytes after offset {header}, "
            f"found {len(raw) - header}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path, n_classes=10):
    """Read an IDX image file (magic 0x803) and label file (magic 0x801)."""
    images = _read_idx(images_path, IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise DataFormatError(
            f"image/label count mismatch: {len(images)} images, {len(labels)} labels"
        )
    return Dataset(
        images / 255.0,
        labels.astype(np.int64),
        n_classes,
        {"source": [str(images_path), str(labels_path)], "preprocessing": []},
    )


def load_split(data_dir, split="train"):
    """Load the ``train`` or ``test`` split from a directory of IDX files.

    Gzipped files are not handled; decompress them first.
    """
    if split not in SPLIT_FILES:
        raise ValueError(f"split must be one of {sorted(SPLIT_FILES)}")
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory not found: {data_dir}")
    img, lab = (data_dir / f for f in SPLIT_FILES[split])
    for p in (img, lab):
        if not p.exists():
            raise FileNotFoundError(f"missing dataset file: {p}")
    return load_idx(img, lab)


def load_csv(path, height, width, n_classes=10):
    """Read ``label,p0,p1,...`` rows with 0-255 integer pixels."""
    labels, rows = [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0].strip() != "label":
            raise DataFormatError(f"{path}: header must start with 'label'")
        if len(header) - 1 != height * width:
            raise DataFormatError(
                f"{path}: {len(header) - 1} pixel columns, expected {height * width}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields")
            labels.append(int(row[0]))
            rows.append([int(v) for v in row[1:]])
    px = np.asarray(rows, dtype=np.float64).reshape(-1, height, width)
    if px.size and (px.min() < 0 or px.max() > 255):
        raise DataFormatError(f"{path}: pixel values must lie in 0..255")
    return Dataset(px / 255.0, labels, n_classes, {"source": [str(path)], "preprocessing": []})


def downsample(ds, factor):
    """Average-pool ``factor x factor`` pixel blocks."""
    factor = int(factor)
    if factor < 1 or ds.height % factor or ds.width % factor:
        raise ValueError(f"image size {ds.height}x{ds.width} not divisible by {factor}")
    n = len(ds)
    imgs = ds.images.reshape(n, ds.height // factor, factor, ds.width // factor, factor)
    pooled = np.clip(imgs.mean(axis=(2, 4)), 0.0, 1.0)
    return ds._derive(images=pooled, step=f"downsample x{factor}")


def pad_images(images, to_height, to_width):
    """Center ``(N, H, W)`` images on a zero background of the target size."""
    images = np.asarray(images, dtype=np.float64)
    _, h, w = images.shape
    if to_height < h or to_width < w:
        raise ValueError(f"cannot pad {h}x{w} images to {to_height}x{to_width}")
    if (to_height, to_width) == (h, w):
        return images
    top, left = (to_height - h) // 2, (to_width - w) // 2
    out = np.zeros((len(images), to_height, to_width))
    out[:, top:top + h, left:left + w] = images
    return out


def pad(ds, to_height, to_width):
    padded = pad_images(ds.images, to_height, to_width)
    if padded is ds.images:
        return ds
    return ds._derive(images=padded, step=f"pad {to_height}x{to_width}")


def subsample(ds, n, seed=0):
    """Seeded selection of ``n`` samples without replacement (order preserved)."""
    if n is None or n >= len(ds):
        return ds
    idx = np.sort(np.random.default_rng(seed).choice(len(ds), size=int(n), replace=False))
    return ds._derive(images=ds.images[idx], labels=ds.labels[idx], step=f"subsample {n} seed {seed}")
