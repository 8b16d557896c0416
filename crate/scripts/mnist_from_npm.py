#!/usr/bin/env python3
"""Build gzipped IDX files from the digit JSON shipped in the `mnist` npm package.

Usage: npm pack mnist && tar xzf mnist-*.tgz && python3 mnist_from_npm.py package/src/digits data/mnist

The package holds 10,000 28x28 digits stored as floats in [0, 1], grouped by
class. Samples are interleaved with a fixed permutation so any prefix is a
class-balanced subset.
"""
import gzip
import json
import os
import random
import struct
import sys

src, dst = sys.argv[1], sys.argv[2]
samples = []
for digit in range(10):
    with open(os.path.join(src, f"{digit}.json")) as f:
        raw = json.load(f)["data"]
    for i in range(len(raw) // 784):
        pixels = bytes(min(255, max(0, round(v * 255))) for v in raw[i * 784:(i + 1) * 784])
        samples.append((pixels, digit))

random.Random(0).shuffle(samples)
os.makedirs(dst, exist_ok=True)
with gzip.GzipFile(os.path.join(dst, "images-idx3-ubyte.gz"), "wb", mtime=0) as f:
    f.write(struct.pack(">IIII", 0x803, len(samples), 28, 28))
    for pixels, _ in samples:
        f.write(pixels)
with gzip.GzipFile(os.path.join(dst, "labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
    f.write(struct.pack(">II", 0x801, len(samples)))
    f.write(bytes(label for _, label in samples))
