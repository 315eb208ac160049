#!/usr/bin/env python3
"""Precompute Xception embeddings for the pretrained_xception backbone.

Runs keras.applications.Xception(include_top=False, pooling="max") over every
image in a manifest and writes the binary embedding file read by
PrecomputedBackbone, keyed by the same FNV-1a content hash as the manifest.

    python tools/export_xception_embeddings.py runs/x/manifest.csv xception.emb
"""

import argparse
import csv
import struct
import sys

import numpy as np

MAGIC = b"MRSEMB01"


def fnv1a(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def load_image(path, size):
    from PIL import Image

    img = Image.open(path).convert("RGB").resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 127.5 - 1.0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("manifest")
    ap.add_argument("output")
    ap.add_argument("--input-size", type=int, default=244)
    ap.add_argument("--batch-size", type=int, default=32)
    args = ap.parse_args()

    import tensorflow as tf

    model = tf.keras.applications.Xception(
        weights="imagenet", include_top=False, pooling="max",
        input_shape=(args.input_size, args.input_size, 3))

    with open(args.manifest, newline="") as f:
        rows = list(csv.DictReader(f))
    seen = {}
    for row in rows:
        h = int(row["content_hash"], 16)
        if h not in seen:
            seen[h] = row["path"]
    items = list(seen.items())
    print(f"{len(items)} unique images", file=sys.stderr)

    name = b"xception"
    with open(args.output, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<IQI", model.output_shape[-1], model.count_params(), len(name)))
        out.write(name)
        out.write(struct.pack("<Q", len(items)))
        for start in range(0, len(items), args.batch_size):
            chunk = items[start:start + args.batch_size]
            batch = np.stack([load_image(p, args.input_size) for _, p in chunk])
            emb = model.predict(batch, verbose=0).astype("<f4")
            for (h, path), vec in zip(chunk, emb):
                with open(path, "rb") as f:
                    if fnv1a(f.read()) != h:
                        sys.exit(f"hash mismatch for {path}; rescan the dataset")
                out.write(struct.pack("<Q", h))
                out.write(vec.tobytes())


if __name__ == "__main__":
    main()
