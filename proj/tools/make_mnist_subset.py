#!/usr/bin/env python3
"""Write a shuffled MNIST subset as IDX files.

The source is the 5000-image MNIST sample shipped inside the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz: 784 pixel columns then the label).

    python3 tools/make_mnist_subset.py path/to/mnist_5k.csv.gz data/mnist_subset
"""
import argparse
import gzip
import pathlib
import struct

import numpy as np


def write_images(path, images):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, images.shape[0], 28, 28))
        fh.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes())


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("csv_gz")
    parser.add_argument("out_dir")
    parser.add_argument("--train", type=int, default=1000)
    parser.add_argument("--test", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    with gzip.open(args.csv_gz) as fh:
        table = np.genfromtxt(fh, delimiter=",")
    images, labels = table[:, :-1], table[:, -1].astype(int)
    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tr, te = slice(0, args.train), slice(args.train, args.train + args.test)
    write_images(out / "train-images-idx3-ubyte", images[tr])
    write_labels(out / "train-labels-idx1-ubyte", labels[tr])
    write_images(out / "test-images-idx3-ubyte", images[te])
    write_labels(out / "test-labels-idx1-ubyte", labels[te])


if __name__ == "__main__":
    main()
