#!/usr/bin/env python3
"""Convert the per-digit JSON image dumps into a single IDX image/label pair.

Input layout: <src>/digits/<d>.json for d in 0..9, each {"data": [...]} with
flat grayscale values in [0,1], 784 per image. Output: a deterministically
shuffled 10000-image set in big-endian IDX format.
"""

import argparse
import json
import random
import struct
from pathlib import Path


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--src", required=True, help="directory containing digits/<d>.json")
    ap.add_argument("--out", required=True, help="output directory for the IDX pair")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images = []
    labels = []
    for digit in range(10):
        flat = json.loads((Path(args.src) / "digits" / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        for i in range(len(flat) // 784):
            pixels = flat[i * 784 : (i + 1) * 784]
            images.append(bytes(round(v * 255) for v in pixels))
            labels.append(digit)

    order = list(range(len(images)))
    random.Random(args.seed).shuffle(order)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "mnist10k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(order), 28, 28))
        for i in order:
            f.write(images[i])
    with open(out / "mnist10k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(order)))
        f.write(bytes(labels[i] for i in order))
    print(f"wrote {len(order)} images to {out}")


if __name__ == "__main__":
    main()
