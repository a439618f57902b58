#!/usr/bin/env python3
"""Convert the digit JSON files shipped with the `mnist` npm package into
gzipped IDX files (the format of the original MNIST distribution).

Usage: make_mnist_subset.py <path/to/package/src/digits> <out_dir>

Images are interleaved with a fixed shuffle so that any prefix of the
file is close to class balanced.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    samples = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        count = len(raw) // 784
        for n in range(count):
            pixels = raw[n * 784:(n + 1) * 784]
            samples.append((bytes(min(255, round(v * 255)) for v in pixels), digit))
    random.Random(20240607).shuffle(samples)
    out.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(out / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(samples), 28, 28))
        for img, _ in samples:
            f.write(img)
    with gzip.GzipFile(out / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(samples)))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {len(samples)} examples to {out}")


if __name__ == "__main__":
    main()
