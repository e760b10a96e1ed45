#!/usr/bin/env python3
"""Build gzipped IDX files from the digits bundled in the `mnist` npm package.

The npm package (https://github.com/cazala/mnist) ships 10,000 MNIST digits as
per-class JSON arrays of pixel intensities in [0, 1], rounded to three
decimals. Rounding back to bytes is exact (error <= 0.1275 of a grey level).

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_from_npm.py package/src/digits data/mnist

Digits are interleaved round-robin by class so any prefix is class-balanced.
"""

import gzip
import json
import os
import struct
import sys


def main(src, dst):
    per_class = []
    for d in range(10):
        with open(os.path.join(src, "%d.json" % d)) as f:
            flat = json.load(f)["data"]
        imgs = [flat[i:i + 784] for i in range(0, len(flat), 784)]
        per_class.append(imgs)

    images, labels = [], []
    longest = max(len(c) for c in per_class)
    for i in range(longest):
        for d in range(10):
            if i < len(per_class[d]):
                images.append(per_class[d][i])
                labels.append(d)

    os.makedirs(dst, exist_ok=True)
    n = len(images)
    with gzip.GzipFile(os.path.join(dst, "images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for img in images:
            f.write(bytes(int(round(v * 255.0)) for v in img))
    with gzip.GzipFile(os.path.join(dst, "labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(labels))
    print("wrote %d digits to %s" % (n, dst))


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
