"""Build the bundled MNIST files (gzipped IDX) from the `mnist-data` npm package.

The npm package ships the original four MNIST IDX archives uncompressed.  This
script takes the 60,000-image training archive, splits off the last 5,000
images as the validation set (a deterministic, standard split), and writes
55,000/5,000 gzipped IDX pairs to data/.  The 10,000-image test archive is not
used.

Usage:
    npm install mnist-data --prefix /tmp/npmmnist
    python scripts/fetch_mnist.py /tmp/npmmnist/node_modules/mnist-data/data data/

The repository already contains the output files; rerunning reproduces them.
"""

import struct
import sys
from pathlib import Path

import numpy as np

from bregopt.problems import write_mnist_idx


def read_idx_images(path):
    data = Path(path).read_bytes()
    magic, n, rows, cols = struct.unpack(">4I", data[:16])
    assert magic == 0x803, f"bad image magic {magic:#x} in {path}"
    return np.frombuffer(data, np.uint8, offset=16).reshape(n, rows, cols)


def read_idx_labels(path):
    data = Path(path).read_bytes()
    magic, n = struct.unpack(">2I", data[:8])
    assert magic == 0x801, f"bad label magic {magic:#x} in {path}"
    return np.frombuffer(data, np.uint8, offset=8)


def main(src_dir, out_dir, n_val=5000):
    src = Path(src_dir)
    images = read_idx_images(src / "train-images-idx3-ubyte")
    labels = read_idx_labels(src / "train-labels-idx1-ubyte")
    assert len(images) == len(labels) == 60_000

    train_i, val_i = images[:-n_val], images[-n_val:]
    train_l, val_l = labels[:-n_val], labels[-n_val:]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_mnist_idx(train_i, train_l,
                    out / "train-images-idx3-ubyte.gz", out / "train-labels-idx1-ubyte.gz")
    write_mnist_idx(val_i, val_l,
                    out / "val-images-idx3-ubyte.gz", out / "val-labels-idx1-ubyte.gz")
    print(f"wrote {len(train_i)} train / {len(val_i)} val samples to {out}")
    print("train label counts:", np.bincount(train_l, minlength=10).tolist())
    print("val label counts:  ", np.bincount(val_l, minlength=10).tolist())


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
