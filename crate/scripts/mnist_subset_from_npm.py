#!/usr/bin/env python3
"""Rebuild data/mnist-subset/ from the `mnist` npm package (10k MNIST digits, MIT).

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_subset_from_npm.py package/src/digits data/mnist-subset

Per class, the first 80% of digits go to train and the rest to test. Both
splits are shuffled with a fixed seed and written as gzipped IDX files.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(prefix, items):
    with gzip.GzipFile(f"{prefix}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(items), 28, 28))
        for pixels, _ in items:
            f.write(bytes(pixels))
    with gzip.GzipFile(f"{prefix}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(items)))
        f.write(bytes(label for _, label in items))


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(raw) // 784
        imgs = [
            [min(255, max(0, round(v * 255))) for v in raw[i * 784:(i + 1) * 784]]
            for i in range(n)
        ]
        cut = (n * 8) // 10
        train += [(img, digit) for img in imgs[:cut]]
        test += [(img, digit) for img in imgs[cut:]]
    rng = random.Random(20230601)
    rng.shuffle(train)
    rng.shuffle(test)
    write_idx(dst / "train", train)
    write_idx(dst / "t10k", test)
    print(f"train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
