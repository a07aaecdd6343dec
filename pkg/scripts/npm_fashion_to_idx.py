"""Convert the per-class JSON dumps of the ``fashion-mnist`` npm package to IDX.

The npm tarball ships ``src/clothes/<class>.json`` files holding raw 0-255
pixel rows, 7000 per class (6000 training followed by 1000 test images). This
script writes the four standard IDX files so that ``bayestn.data.load_idx``
can read them::

    python scripts/npm_fashion_to_idx.py /path/to/package/src/clothes out_dir

Images of the test block that duplicate a training image byte-for-byte are
dropped. The resulting split mirrors the 60k/10k layout but is not guaranteed
to be byte-identical to the official release.
"""
import json
import struct
import sys
from pathlib import Path

import numpy as np

N_TRAIN_PER_CLASS = 6000


def write_idx_images(path, images):
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def main(src, out):
    src, out = Path(src), Path(out)
    out.mkdir(parents=True, exist_ok=True)
    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(10):
        data = json.loads((src / f"{c}.json").read_text())["data"]
        # the class-0 dump carries two empty placeholder rows
        rows = np.asarray([r for r in data if len(r) == 784], dtype=np.uint8)
        train, test = rows[:N_TRAIN_PER_CLASS], rows[N_TRAIN_PER_CLASS:]
        seen = {r.tobytes() for r in train}
        test = np.asarray([r for r in test if r.tobytes() not in seen])
        train_x.append(train)
        train_y += [c] * len(train)
        test_x.append(test)
        test_y += [c] * len(test)

    # interleave classes deterministically so the files are not class-sorted
    rng = np.random.default_rng(0)
    for name, xs, ys in (("train", train_x, train_y), ("t10k", test_x, test_y)):
        x = np.concatenate(xs).reshape(-1, 28, 28)
        y = np.asarray(ys)
        perm = rng.permutation(len(y))
        write_idx_images(out / f"{name}-images-idx3-ubyte", x[perm])
        write_idx_labels(out / f"{name}-labels-idx1-ubyte", y[perm])
        print(f"{name}: {len(y)} images")


if __name__ == "__main__":
    main(*sys.argv[1:3])
