#!/usr/bin/env python3
"""Brute-force leave-one-out check for a seed-pair file.

For each fold, the direction is built from the other pairs and the held-out
pair is scored as (low, high); the fold is correct when high scores higher.
Pure Python, written independently of the Rust library; its JSON output is
the record the library is checked against.

    python3 scripts/loo_oracle.py --embeddings glove.6B.300d.txt \
        --seeds data/seeds/complexity.tsv --out data/oracle/loo_complexity.json
"""

import argparse
import hashlib
import json
import math
import re
import sys

TOKEN = re.compile(r"[^\W_]+(?:[-'’‐‑][^\W_]+)*|[^\s]", re.UNICODE)


def tokens(text):
    return TOKEN.findall(text)


def read_seeds(path):
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            low, high = line.split("\t")
            pairs.append((low.strip(), high.strip()))
    return pairs


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def read_vectors(path, wanted):
    """Vectors for the wanted words only. The first occurrence of a word wins."""
    vecs = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split(" ")
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if word in wanted and word not in vecs:
                vecs[word] = [float(v) for v in values]
    return vecs, dim


def lookup(vecs, word, dim):
    if word in vecs:
        return vecs[word]
    if word.lower() in vecs:
        return vecs[word.lower()]
    return [0.0] * dim


def embed(text, vecs, dim):
    toks = tokens(text)
    out = [0.0] * dim
    for t in toks:
        v = lookup(vecs, t, dim)
        for j in range(dim):
            out[j] += v[j]
    return [x / len(toks) for x in out]


def cosine(a, b):
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, sum(x * y for x, y in zip(a, b)) / (na * nb)))


def score(text, direction, vecs, dim, pooling):
    sims = [cosine(lookup(vecs, t, dim), direction) for t in tokens(text)]
    return max(sims) if pooling == "max" else sum(sims) / len(sims)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--embeddings", required=True)
    ap.add_argument("--seeds", required=True)
    ap.add_argument("--pooling", choices=["mean", "max"], default="mean")
    ap.add_argument("--out")
    args = ap.parse_args()

    pairs = read_seeds(args.seeds)
    wanted = set()
    for low, high in pairs:
        for t in tokens(low) + tokens(high):
            wanted.update((t, t.lower()))
    vecs, dim = read_vectors(args.embeddings, wanted)

    folds = []
    for i, (low, high) in enumerate(pairs):
        rest = [p for j, p in enumerate(pairs) if j != i]
        direction = [0.0] * dim
        for lo, hi in rest:
            e_lo, e_hi = embed(lo, vecs, dim), embed(hi, vecs, dim)
            for j in range(dim):
                direction[j] += e_hi[j] - e_lo[j]
        direction = [x / len(rest) for x in direction]
        s_low = score(low, direction, vecs, dim, args.pooling)
        s_high = score(high, direction, vecs, dim, args.pooling)
        folds.append({
            "held_out": i,
            "low": low,
            "high": high,
            "score_low": s_low,
            "score_high": s_high,
            "correct": s_high > s_low,
        })

    record = {
        "embeddings_sha256": sha256(args.embeddings),
        "seeds_sha256": sha256(args.seeds),
        "pooling": args.pooling,
        "dim": dim,
        "folds": folds,
        "correct": sum(f["correct"] for f in folds),
    }
    text = json.dumps(record, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
