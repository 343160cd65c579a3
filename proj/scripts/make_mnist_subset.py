#!/usr/bin/env python3
"""Regenerates the desk-scale MNIST subset under data/mnist/.

Source: the `mnist` npm package (https://www.npmjs.com/package/mnist,
cazala/mnist, MIT), which bundles ~1000 genuine MNIST images per digit as
JSON with pixel values stored as round(byte / 255, 3). That rounding is
injective over bytes 0..255, so round(value * 255) recovers the original
MNIST bytes exactly.

Usage:
    npm install mnist
    python3 scripts/make_mnist_subset.py --src node_modules/mnist/src/digits \
        --out data/mnist

The split is deterministic: within each digit, every 5th image goes to the
test set (~20%), and the train set order is shuffled with a fixed LCG so the
first epoch of an unshuffled run is not class-sorted.
"""

import argparse
import json
import pathlib
import struct


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def lcg_shuffle(items, seed=0x2545F4914F6CDD1D):
    state = seed

    def nxt(bound):
        nonlocal state
        state = (state * 6364136223846793005 + 1442695040888963407) % (1 << 64)
        return (state >> 33) % bound

    for i in range(len(items) - 1, 0, -1):
        j = nxt(i + 1)
        items[i], items[j] = items[j], items[i]
    return items


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--src", required=True, help="directory with 0.json .. 9.json")
    ap.add_argument("--out", required=True, help="output directory for IDX files")
    args = ap.parse_args()

    src = pathlib.Path(args.src)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train, test = [], []
    for digit in range(10):
        flat = json.load(open(src / f"{digit}.json"))["data"]
        assert len(flat) % 784 == 0
        count = len(flat) // 784
        for i in range(count):
            vals = flat[i * 784 : (i + 1) * 784]
            img = [round(v * 255) for v in vals]
            assert all(0 <= b <= 255 for b in img)
            (test if i % 5 == 4 else train).append((img, digit))

    lcg_shuffle(train)
    lcg_shuffle(test, seed=0x9E3779B97F4A7C15)

    write_idx_images(out / "train-images-idx3-ubyte", [img for img, _ in train])
    write_idx_labels(out / "train-labels-idx1-ubyte", [lab for _, lab in train])
    write_idx_images(out / "t10k-images-idx3-ubyte", [img for img, _ in test])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", [lab for _, lab in test])
    print(f"wrote {len(train)} train / {len(test)} test images to {out}")


if __name__ == "__main__":
    main()
