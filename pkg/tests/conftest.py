import os
import struct
from pathlib import Path

import numpy as np
import pytest

FASHION_DIR = Path(os.environ.get("BAYESTN_DATA_DIR", "/root/data/fashion-mnist"))


def write_idx(path, array, magic):
    array = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def write_split(directory, prefix, images, labels):
    names = {"train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
             "t10k": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")}[prefix]
    write_idx(directory / names[0], images, 0x803)
    write_idx(directory / names[1], labels, 0x801)


@pytest.fixture
def idx_dir(tmp_path):
    """Tiny 8x8 dataset whose class is the brightness band of the image."""
    rng = np.random.default_rng(0)

    def make(n):
        labels = rng.integers(0, 3, size=n)
        base = labels[:, None, None] * 80 + 20
        images = np.clip(base + rng.integers(-15, 16, size=(n, 8, 8)), 0, 255)
        return images, labels

    write_split(tmp_path, "train", *make(60))
    write_split(tmp_path, "t10k", *make(30))
    return tmp_path
