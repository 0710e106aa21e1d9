#!/usr/bin/env python3
"""Build gzip IDX files from the 10k-digit MNIST sample shipped in the npm `mnist` package.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist

Per class, the last TEST_PER_CLASS digits go to the test file and the rest to the
train file. Both files are shuffled with a fixed seed so any prefix is class-mixed.
Pixel values in the package are byte/255 rounded to 3 decimals; they are mapped
back to bytes with round(v * 255).
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

TEST_PER_CLASS = 200
SEED = 20230101


def write_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        count = len(raw) // 784
        for k in range(count):
            px = [min(255, max(0, round(v * 255))) for v in raw[k * 784:(k + 1) * 784]]
            (test if k >= count - TEST_PER_CLASS else train).append((px, digit))
    rng = random.Random(SEED)
    rng.shuffle(train)
    rng.shuffle(test)
    for name, rows in (("train", train), ("t10k", test)):
        write_images(dst / f"{name}-images-idx3-ubyte.gz", [r[0] for r in rows])
        write_labels(dst / f"{name}-labels-idx1-ubyte.gz", [r[1] for r in rows])
        print(f"{name}: {len(rows)} samples")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
