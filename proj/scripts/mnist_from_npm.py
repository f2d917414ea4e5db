#!/usr/bin/env python3
"""Convert the digits shipped in the npm `mnist` package to MNIST IDX files.

The package stores 10000 MNIST digits as src/digits/<d>.json, each holding a flat
array of 784-pixel images scaled to [0, 1]. The samples are shuffled with a fixed
seed and split in half into train-* and t10k-* IDX pairs.

Usage: mnist_from_npm.py <package>/src/digits <out_dir> [--train N]
"""
import argparse
import json
import pathlib
import random
import struct


def write_idx(out: pathlib.Path, prefix: str, samples) -> None:
    images = bytearray(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
    labels = bytearray(struct.pack(">II", 0x00000801, len(samples)))
    for pixels, label in samples:
        images.extend(pixels)
        labels.append(label)
    (out / f"{prefix}-images-idx3-ubyte").write_bytes(images)
    (out / f"{prefix}-labels-idx1-ubyte").write_bytes(labels)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("digits", type=pathlib.Path)
    ap.add_argument("out", type=pathlib.Path)
    ap.add_argument("--train", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    samples = []
    for d in range(10):
        flat = json.loads((args.digits / f"{d}.json").read_text())["data"]
        if len(flat) % 784:
            raise SystemExit(f"{d}.json: length {len(flat)} is not a multiple of 784")
        for i in range(0, len(flat), 784):
            px = bytes(min(255, max(0, round(v * 255))) for v in flat[i : i + 784])
            samples.append((px, d))
    random.Random(args.seed).shuffle(samples)

    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out, "train", samples[: args.train])
    write_idx(args.out, "t10k", samples[args.train :])
    print(f"wrote {args.train} train and {len(samples) - args.train} test samples to {args.out}")


if __name__ == "__main__":
    main()
