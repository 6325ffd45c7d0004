"""Write a stratified train/test split of mlxtend's 5000-image MNIST sample as IDX files.

    python tools/make_mnist_subset.py data/ [--n-test-per-class 100] [--seed 0]

Produces train-images-idx3-ubyte, train-labels-idx1-ubyte,
test-images-idx3-ubyte and test-labels-idx1-ubyte in the target directory.
"""
import argparse
import gzip
from pathlib import Path

import numpy as np

from sasgld.io import write_idx_images, write_idx_labels


def mlxtend_csv() -> Path:
    import mlxtend.data
    return Path(mlxtend.data.__file__).parent / "data" / "mnist_5k.csv.gz"


def load_csv(path):
    with gzip.open(path, "rt") as fh:
        raw = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    return raw[:, :-1].astype(np.uint8), raw[:, -1].astype(np.uint8)


def stratified_split(labels, n_test_per_class, rng):
    test = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        test.extend(rng.choice(idx, size=n_test_per_class, replace=False))
    mask = np.zeros(labels.size, dtype=bool)
    mask[test] = True
    train_idx, test_idx = np.flatnonzero(~mask), np.flatnonzero(mask)
    return rng.permutation(train_idx), rng.permutation(test_idx)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--csv", default=None, help="path to mnist_5k.csv.gz (default: mlxtend's copy)")
    ap.add_argument("--n-test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    images, labels = load_csv(args.csv or mlxtend_csv())
    tr, te = stratified_split(labels, args.n_test_per_class, np.random.default_rng(args.seed))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx_images(out / "train-images-idx3-ubyte", images[tr])
    write_idx_labels(out / "train-labels-idx1-ubyte", labels[tr])
    write_idx_images(out / "test-images-idx3-ubyte", images[te])
    write_idx_labels(out / "test-labels-idx1-ubyte", labels[te])
    print(f"wrote {tr.size} train / {te.size} test images to {out}")


if __name__ == "__main__":
    main()
