"""Builds the synthetic scoring fixture: 2 models x 5 prompts x 20 seeds.

Every embedding has 16 coordinates of +-1/4, so it is exactly unit length
and every pairwise cosine is a multiple of 1/16. Expected scores come from
a direct double loop over pairs.

Run from this directory: python3 make_fixture.py
"""

import json
import random
import struct
from pathlib import Path

DIM = 16
SEEDS = list(range(1000, 1020))
PROMPTS = ["p1", "p2", "p3", "p4", "p5"]
# coordinates flipped away from the prompt's base pattern, per model
FLIPS = {"model-a": [1, 2, 3, 5, 7], "model-b": [2, 4, 4, 6, 8]}
DESCRIPTOR = {"name": "synthetic-dyadic", "embedding_dim": DIM,
              "preprocessing_id": "synthetic/none"}

HERE = Path(__file__).parent
ROOT = HERE / "data"
EXPERIMENT = "synthetic"


def embeddings(rng, flips):
    base = [rng.choice((-1, 1)) for _ in range(DIM)]
    out = []
    for _ in SEEDS:
        v = list(base)
        for i in rng.sample(range(DIM), flips):
            v[i] = -v[i]
        out.append([0.25 * x for x in v])
    return out


def scse(prompt, vectors):
    desc = json.dumps(DESCRIPTOR, separators=(",", ":")).encode()
    buf = b"SCSE" + struct.pack("<HIII", 1, DIM, len(vectors), len(desc)) + desc
    for seed, v in zip(SEEDS, vectors):
        sid = f"{prompt}/{seed}".encode()
        buf += struct.pack("<H", len(sid)) + sid + struct.pack(f"<{DIM}f", *v)
    return buf


def scs(vectors):
    total, pairs = 0.0, 0
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            dot = sum(a * b for a, b in zip(vectors[i], vectors[j]))
            total += max(100.0 * dot, 0.0)
            pairs += 1
    return total / pairs, pairs


def fmt(x):
    # same text as Rust's shortest round-trip Display for f64
    return str(int(x)) if x == int(x) else repr(x)


def main():
    rng = random.Random(20240611)
    manifest = {
        "experiment_id": EXPERIMENT,
        "layout_root": "data",
        "seeds": SEEDS,
        "models": [
            {"model_id": m, "generation": {"width": 1024, "height": 1024,
                                           "scheduler": "K_EULER", "guidance_scale": 7.5,
                                           "num_inference_steps": 50}}
            for m in FLIPS
        ],
        "prompts": [{"prompt_id": p, "text": f"synthetic prompt {p}"} for p in PROMPTS],
    }
    (HERE / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (HERE / "expected").mkdir(exist_ok=True)
    for model, flips in FLIPS.items():
        rows = ["prompt_id,score,n_images,n_pairs"]
        for prompt, k in zip(PROMPTS, flips):
            vectors = embeddings(rng, k)
            d = ROOT / EXPERIMENT / model
            d.mkdir(parents=True, exist_ok=True)
            (d / f"{prompt}.scse").write_bytes(scse(prompt, vectors))
            score, pairs = scs(vectors)
            rows.append(f"{prompt},{fmt(score)},{len(vectors)},{pairs}")
        (HERE / "expected" / f"{model}.csv").write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
