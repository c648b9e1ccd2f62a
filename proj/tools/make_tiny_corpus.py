#!/usr/bin/env python3
"""Generate the bundled synthetic character corpora under data/.

Output is deterministic for a given --seed.
"""
import argparse
import random
from pathlib import Path

DET = ["the", "a", "one", "every", "some"]
ADJ = ["small", "red", "old", "quiet", "bright", "cold", "green", "tall"]
NOUN = ["cat", "dog", "bird", "river", "stone", "tree", "house", "child", "boat", "lamp"]
VERB = ["sees", "finds", "likes", "moves", "holds", "follows", "paints", "hears"]
PREP = ["near", "under", "over", "behind", "beside"]
ADV = ["slowly", "often", "again", "today", "quickly"]


def noun_phrase(rng):
    words = [rng.choice(DET)]
    if rng.random() < 0.5:
        words.append(rng.choice(ADJ))
    words.append(rng.choice(NOUN))
    return words


def sentence(rng):
    words = noun_phrase(rng) + [rng.choice(VERB)] + noun_phrase(rng)
    if rng.random() < 0.3:
        words += [rng.choice(PREP)] + noun_phrase(rng)
    if rng.random() < 0.25:
        words.append(rng.choice(ADV))
    return " ".join(words)


def lines(rng, n_chars):
    out, size = [], 0
    while size < n_chars:
        line = sentence(rng)
        out.append(line)
        size += len(line) + 1
    return "\n".join(out) + "\n"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data")
    parser.add_argument("--seed", type=int, default=20190807)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    tiny = args.out / "tiny_char"
    tiny.mkdir(parents=True, exist_ok=True)
    (tiny / "train.txt").write_text(lines(rng, 48000))
    (tiny / "valid.txt").write_text(lines(rng, 6000))
    (tiny / "test.txt").write_text(lines(rng, 6000))

    overfit = args.out / "overfit_char"
    overfit.mkdir(parents=True, exist_ok=True)
    text = lines(rng, 1000)
    for name in ("train.txt", "valid.txt", "test.txt"):
        (overfit / name).write_text(text)


if __name__ == "__main__":
    main()
