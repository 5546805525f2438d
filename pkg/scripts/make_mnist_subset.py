"""Build IDX files for the bundled 5,000-image MNIST subset.

The only MNIST copy reachable offline here is the 5k-example CSV shipped
inside the ``mlxtend`` wheel (500 images per digit).  This script splits it
per class into 4,000 training and 1,000 test images and writes them in the
standard IDX layout under ``data/``.

    pip download mlxtend --no-deps -d /tmp/dl
    python scripts/make_mnist_subset.py /tmp/dl/mlxtend-*.whl
"""

import argparse
import gzip
import io
import pathlib
import zipfile

import numpy as np

from multirep.data import write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_csv(path):
    path = pathlib.Path(path)
    if path.suffix == ".whl":
        raw = zipfile.ZipFile(path).read(MEMBER)
    else:
        raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    return pixels, table[:, -1].astype(np.uint8)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", help="mlxtend wheel or mnist_5k.csv(.gz)")
    ap.add_argument("--out", default="data")
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = read_csv(args.source)
    rng = np.random.default_rng(args.seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        test.extend(idx[: args.test_per_class])
        train.extend(idx[args.test_per_class:])
    train, test = np.sort(train), np.sort(test)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "mnist5k-train-images-idx3-ubyte.gz", images[train])
    write_idx(out / "mnist5k-train-labels-idx1-ubyte.gz", labels[train])
    write_idx(out / "mnist5k-test-images-idx3-ubyte.gz", images[test])
    write_idx(out / "mnist5k-test-labels-idx1-ubyte.gz", labels[test])
    print(f"wrote {len(train)} train / {len(test)} test images to {out}")


if __name__ == "__main__":
    main()
