"""Associative-recall task AR(n, V).

Layout of one instance with ``n`` pairs and length ``T``::

    [KEY, k1, v1, KEY, k2, v2, ..., filler * (T - 3n - 2), QUERY, k_j]

Regular tokens are ``0..V-1``; ``KEY = V``, ``VALUE = V + 1`` (allocated,
never emitted) and ``QUERY = V + 2``, so a model sees ``V + 3`` token ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .rng import stream


class TaskConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TaskConfig:
    n: int
    T: int
    V: int = 32

    def __post_init__(self):
        if self.V < 2:
            raise TaskConfigError(f"V must be >= 2, got {self.V}")
        if self.n < 1:
            raise TaskConfigError(f"n must be >= 1, got {self.n}")
        if self.n > self.V:
            raise TaskConfigError(f"n={self.n} distinct keys need V >= n, got V={self.V}")
        if self.T < 3 * self.n + 2:
            raise TaskConfigError(f"T={self.T} < 3n+2={3 * self.n + 2}")

    @property
    def key_marker(self) -> int:
        return self.V

    @property
    def value_marker(self) -> int:
        return self.V + 1

    @property
    def query_marker(self) -> int:
        return self.V + 2

    @property
    def model_vocab(self) -> int:
        return self.V + 3

    @property
    def filler_length(self) -> int:
        return self.T - 3 * self.n - 2


@dataclass(frozen=True)
class ARInstance:
    tokens: tuple[int, ...]
    pairs: tuple[tuple[int, int], ...]
    query_index: int  # 1-based, as in the task definition
    target: int
    n: int
    T: int
    V: int

    def to_record(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "pairs": [list(p) for p in self.pairs],
            "query_index": self.query_index,
            "target": self.target,
            "n": self.n,
            "T": self.T,
            "V": self.V,
        }

    def to_line(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_line(cls, line: str) -> "ARInstance":
        rec = json.loads(line)
        return cls(
            tokens=tuple(rec["tokens"]),
            pairs=tuple(tuple(p) for p in rec["pairs"]),
            query_index=rec["query_index"],
            target=rec["target"],
            n=rec["n"],
            T=rec["T"],
            V=rec["V"],
        )


def generate(config: TaskConfig, rng: np.random.Generator) -> ARInstance:
    n, T, V = config.n, config.T, config.V
    keys = rng.choice(V, size=n, replace=False)
    values = rng.integers(0, V, size=n)
    filler = rng.integers(0, V, size=config.filler_length)
    j = int(rng.integers(1, n + 1))
    tokens = np.empty(T, dtype=np.int64)
    tokens[0 : 3 * n : 3] = config.key_marker
    tokens[1 : 3 * n : 3] = keys
    tokens[2 : 3 * n : 3] = values
    tokens[3 * n : T - 2] = filler
    tokens[T - 2] = config.query_marker
    tokens[T - 1] = keys[j - 1]
    return ARInstance(
        tokens=tuple(int(t) for t in tokens),
        pairs=tuple((int(k), int(v)) for k, v in zip(keys, values)),
        query_index=j,
        target=int(values[j - 1]),
        n=n,
        T=T,
        V=V,
    )


def batch(config: TaskConfig, batch_size: int, seed: int, *keys) -> list[ARInstance]:
    """``batch_size`` instances, instance ``i`` drawn from stream ``(*keys, i)``."""
    return [generate(config, stream(seed, *keys, i)) for i in range(batch_size)]


def batch_arrays(instances: list[ARInstance]) -> tuple[np.ndarray, np.ndarray]:
    """Stack instances into ``(tokens[B, T], targets[B])`` int arrays."""
    if not instances:
        return np.zeros((0, 0), dtype=np.int64), np.zeros(0, dtype=np.int64)
    toks = np.array([inst.tokens for inst in instances], dtype=np.int64)
    tg = np.array([inst.target for inst in instances], dtype=np.int64)
    return toks, tg


def baseline_accuracy(V: int) -> float:
    """Accuracy of uniform guessing over the ``V`` regular tokens."""
    if V < 2:
        raise TaskConfigError(f"V must be >= 2, got {V}")
    return 1.0 / V


@dataclass
class ParsedInstance:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    query_index: int = 0
    target: int = -1


def parse(tokens, n: int, V: int) -> ParsedInstance:
    """Recover pairs, query index and target from a token sequence; raises on malformed input."""
    toks = list(tokens)
    T = len(toks)
    if T < 3 * n + 2:
        raise ValueError(f"sequence of length {T} too short for n={n}")
    out = ParsedInstance()
    for i in range(n):
        marker, k, v = toks[3 * i : 3 * i + 3]
        if marker != V:
            raise ValueError(f"pair {i}: expected key marker {V}, got {marker}")
        if not (0 <= k < V and 0 <= v < V):
            raise ValueError(f"pair {i}: key/value outside [0, {V})")
        out.pairs.append((k, v))
    for t in toks[3 * n : T - 2]:
        if not 0 <= t < V:
            raise ValueError(f"filler token {t} outside [0, {V})")
    if toks[T - 2] != V + 2:
        raise ValueError("missing query marker")
    keys = [k for k, _ in out.pairs]
    if len(set(keys)) != n:
        raise ValueError("keys are not distinct")
    qk = toks[T - 1]
    if qk not in keys:
        raise ValueError(f"queried key {qk} was never stored")
    j = keys.index(qk)
    out.query_index = j + 1
    out.target = out.pairs[j][1]
    return out
