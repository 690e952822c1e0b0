"""Synthetic counting task with a fully enumerable answer set.

An input is a digit string x = (x_1 .. x_N), 1 <= N <= n_max, each digit in
0..9.  For every position k in 1..N the triple (k-1, x_k, N-k) is a correct
answer, so an input of length N has exactly N valid answers and the true
conditional distribution is uniform over them (k is drawn uniformly).

Inputs and answers are plain tuples of ints; digits double as token ids.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

DEFAULT_N_MAX = 10
DEFAULT_SIZES = (100_000, 10_000, 10_000)


def _check_input(x) -> tuple[int, ...]:
    x = tuple(x)
    if len(x) == 0:
        raise ValueError("input digit sequence must be non-empty")
    if any(not (0 <= d <= 9) for d in x):
        raise ValueError(f"input tokens must be digits in 0..9, got {x}")
    return x


def enumerate_answers(x) -> set[tuple[int, int, int]]:
    """All valid answers for input x: {(k-1, x_k, N-k) for k = 1..N}."""
    x = _check_input(x)
    n = len(x)
    return {(k - 1, x[k - 1], n - k) for k in range(1, n + 1)}


def is_valid(x, y) -> bool:
    """True iff y is a length-3 member of enumerate_answers(x)."""
    y = tuple(y)
    if len(y) != 3:
        return False
    return y in enumerate_answers(x)


def true_conditional(x, y) -> float:
    """Exact P_R(y|x): 1/N on each of the N valid answers, 0 elsewhere."""
    x = _check_input(x)
    return 1.0 / len(x) if is_valid(x, y) else 0.0


@dataclass(frozen=True)
class CountingExample:
    input: tuple[int, ...]
    answer: tuple[int, int, int]


@dataclass
class CountingDataset:
    train: list[CountingExample]
    valid: list[CountingExample]
    test: list[CountingExample]
    seed: int
    n_max: int

    @property
    def splits(self) -> dict[str, list[CountingExample]]:
        return {"train": self.train, "valid": self.valid, "test": self.test}


def _sample_example(rng: random.Random, n_max: int) -> CountingExample:
    # Input lengths are uniform over 1..n_max; the source distribution only
    # bounds N <= 10, so mean answers/input is 5.5 here, not the reported 4.97.
    n = rng.randint(1, n_max)
    x = tuple(rng.randint(0, 9) for _ in range(n))
    k = rng.randint(1, n)
    return CountingExample(input=x, answer=(k - 1, x[k - 1], n - k))


def generate_dataset(seed: int = 0, sizes=DEFAULT_SIZES, n_max: int = DEFAULT_N_MAX) -> CountingDataset:
    """Deterministically generate train/valid/test splits of counting examples."""
    if len(sizes) != 3 or any(s <= 0 for s in sizes):
        raise ValueError(f"sizes must be three positive ints, got {sizes}")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    rng = random.Random(seed)
    splits = [[_sample_example(rng, n_max) for _ in range(size)] for size in sizes]
    return CountingDataset(train=splits[0], valid=splits[1], test=splits[2], seed=seed, n_max=n_max)


def _format_example(ex: CountingExample) -> str:
    return " ".join(map(str, ex.input)) + "\t" + " ".join(map(str, ex.answer))


def _parse_example(line: str) -> CountingExample:
    left, right = line.rstrip("\n").split("\t")
    x = tuple(int(t) for t in left.split())
    y = tuple(int(t) for t in right.split())
    if len(y) != 3:
        raise ValueError(f"answer must have 3 tokens: {line!r}")
    return CountingExample(input=x, answer=y)  # type: ignore[arg-type]


def save_dataset(ds: CountingDataset, out_dir) -> None:
    """Write train/valid/test text files plus a manifest into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, examples in ds.splits.items():
        with open(out / f"{name}.txt", "w") as f:
            for ex in examples:
                f.write(_format_example(ex) + "\n")
    mean_answers = sum(len(ex.input) for ex in ds.train) / len(ds.train)
    with open(out / "manifest.txt", "w") as f:
        f.write(f"seed={ds.seed}\n")
        f.write(f"n_max={ds.n_max}\n")
        for name, examples in ds.splits.items():
            f.write(f"{name}_size={len(examples)}\n")
        f.write(f"mean_answers_per_input={mean_answers:.4f}\n")


def load_dataset(data_dir) -> CountingDataset:
    data_dir = Path(data_dir)
    manifest = {}
    with open(data_dir / "manifest.txt") as f:
        for line in f:
            key, value = line.rstrip("\n").split("=")
            manifest[key] = value
    splits = {}
    for name in ("train", "valid", "test"):
        with open(data_dir / f"{name}.txt") as f:
            splits[name] = [_parse_example(line) for line in f]
    return CountingDataset(
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        seed=int(manifest["seed"]),
        n_max=int(manifest["n_max"]),
    )
