#!/usr/bin/env python3
"""Build MNIST IDX files from the digits bundled in the `mnist` npm package.

Usage: scripts/fetch_mnist.py [OUT_DIR]   (default: data/mnist)

The npm package ships ~10k MNIST digits as per-class JSON arrays of
intensities in [0, 1]. They are shuffled with a fixed seed and split into
train / t10k IDX files (uncompressed, big-endian headers).
"""
import json
import os
import random
import struct
import subprocess
import sys
import tarfile
import tempfile

TRAIN_FRACTION = 0.8
SEED = 20250101


def load_digits(pkg_dir):
    samples = []
    for label in range(10):
        with open(os.path.join(pkg_dir, "package", "src", "digits", f"{label}.json")) as f:
            raw = json.load(f)["data"]
        n = len(raw) // 784
        for i in range(n):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in raw[i * 784:(i + 1) * 784])
            samples.append((pixels, label))
    return samples


def write_idx(out_dir, prefix, samples):
    with open(os.path.join(out_dir, f"{prefix}-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "data/mnist"
    os.makedirs(out_dir, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
            tar.extractall(tmp)
        samples = load_digits(tmp)
    random.Random(SEED).shuffle(samples)
    cut = int(len(samples) * TRAIN_FRACTION)
    write_idx(out_dir, "train", samples[:cut])
    write_idx(out_dir, "t10k", samples[cut:])
    print(f"wrote {cut} train / {len(samples) - cut} test samples to {out_dir}")


if __name__ == "__main__":
    main()
