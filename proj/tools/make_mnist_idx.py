#!/usr/bin/env python3
"""Build canonical MNIST IDX fixture files from the npm `mnist` package.

The npm package `mnist` (1.1.0) ships 10k genuine MNIST samples as JSON,
one file per digit class, with pixel intensities quantized to three
decimals of x/255. round(v*255) recovers the original uint8 pixels
exactly (quantization error is at most 0.1275 gray levels).

Usage:
    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 make_mnist_idx.py package/src/digits out_dir --count 2500

Samples are interleaved round-robin across classes so any prefix of the
output is class-balanced. Output follows the canonical IDX layout:
images magic 0x00000803 with big-endian dims (N, 28, 28), labels magic
0x00000801 with dim (N,).
"""

import argparse
import json
import pathlib
import struct


def load_class(digits_dir: pathlib.Path, digit: int):
    raw = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
    n = len(raw) // 784
    samples = []
    for i in range(n):
        px = raw[i * 784 : (i + 1) * 784]
        samples.append(bytes(round(v * 255) for v in px))
    return samples


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--count", type=int, default=2500)
    args = ap.parse_args()

    per_class = [load_class(args.digits_dir, d) for d in range(10)]
    images, labels = [], []
    k = 0
    while len(images) < args.count:
        d = k % 10
        idx = k // 10
        if idx < len(per_class[d]):
            images.append(per_class[d][idx])
            labels.append(d)
        k += 1

    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">iiii", 0x803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(args.out_dir / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">ii", 0x801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} samples to {args.out_dir}")


if __name__ == "__main__":
    main()
