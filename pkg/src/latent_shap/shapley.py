"""Shapley values for arbitrary coalition games over up to 64 players.

Two estimators are provided: exact subset enumeration (memoized, one value
evaluation per subset) and Monte-Carlo permutation sampling with standard
errors. Both report the efficiency endpoints v(N) and v(empty) alongside the
per-player values.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import InsufficientSamples, PlayerCountExceeded, ValueFunctionFailure

# Enumeration over 2^n subsets is rejected above this player count.
EXACT_PLAYER_CAP = 20
# Bitset width; hard cap for every estimator.
MAX_PLAYERS = 64

# Permutations are drawn in fixed-size chunks so that permutation index p is
# always served by the substream keyed on (seed, p // CHUNK), independent of
# the requested sample count and of any dispatch order.
_PERMUTATION_CHUNK = 1024

_SMALLEST_NORMAL = sys.float_info.min


@dataclass(frozen=True)
class Coalition:
    """A subset of players 0..n-1, stored as a bitmask."""

    members: int
    n: int

    def __post_init__(self):
        if not 1 <= self.n <= MAX_PLAYERS:
            raise PlayerCountExceeded(f"player count {self.n} outside 1..{MAX_PLAYERS}")
        if self.members < 0 or self.members >> self.n:
            raise ValueError(f"coalition mask {self.members:#x} has bits outside 0..{self.n - 1}")

    @classmethod
    def empty(cls, n: int) -> "Coalition":
        return cls(0, n)

    @classmethod
    def full(cls, n: int) -> "Coalition":
        return cls((1 << n) - 1, n)

    @classmethod
    def of(cls, indices: Sequence[int], n: int) -> "Coalition":
        mask = 0
        for i in indices:
            mask |= 1 << i
        return cls(mask, n)

    def __contains__(self, player: int) -> bool:
        return bool((self.members >> player) & 1)

    def __iter__(self) -> Iterator[int]:
        for i in range(self.n):
            if (self.members >> i) & 1:
                yield i

    def __len__(self) -> int:
        return int(self.members).bit_count()

    def add(self, player: int) -> "Coalition":
        return Coalition(self.members | (1 << player), self.n)

    def complement(self) -> "Coalition":
        return Coalition(self.members ^ ((1 << self.n) - 1), self.n)

    def is_full(self) -> bool:
        return self.members == (1 << self.n) - 1


@dataclass
class ValueFunction:
    """A coalition game: a deterministic map from coalitions to reals.

    ``evaluate`` must return the same float for the same coalition for the
    lifetime of the handle. ``batch_evaluate``, when provided, takes a uint64
    array of coalition bitmasks and returns the matching float64 array; it is
    a fast path and must agree with ``evaluate`` bit-for-bit.
    """

    n: int
    evaluate: Callable[[Coalition], float]
    batch_evaluate: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = ""

    def __post_init__(self):
        if not 1 <= self.n <= MAX_PLAYERS:
            raise PlayerCountExceeded(f"player count {self.n} outside 1..{MAX_PLAYERS}")


@dataclass
class Attribution:
    """Per-player Shapley estimates with uncertainty and endpoints."""

    values: np.ndarray
    std_errors: np.ndarray
    v_full: float
    v_empty: float
    method: str  # "exact" | "monte-carlo"
    num_samples: int
    feature_names: Optional[list[str]] = None
    target_class: Optional[int] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.std_errors = np.asarray(self.std_errors, dtype=float)
        if self.values.shape != self.std_errors.shape:
            raise ValueError("values and std_errors must have equal length")

    @property
    def n(self) -> int:
        return len(self.values)


def efficiency_gap(a: Attribution) -> float:
    """Signed violation of the efficiency axiom: sum(values) - (v_full - v_empty)."""
    return float(np.sum(a.values) - (a.v_full - a.v_empty))


def _checked(value: float, mask: int) -> float:
    v = float(value)
    if math.isnan(v) or math.isinf(v) or (v != 0.0 and abs(v) < _SMALLEST_NORMAL):
        raise ValueFunctionFailure(f"value function returned {v!r} for coalition mask {mask:#x}")
    return v


def _checked_array(values: np.ndarray, masks: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values) | ((values != 0.0) & (np.abs(values) < _SMALLEST_NORMAL))
    if np.any(bad):
        k = int(np.argmax(bad))
        raise ValueFunctionFailure(
            f"value function returned {values[k]!r} for coalition mask {int(masks[k]):#x}"
        )
    return values


def _evaluate_masks(v: ValueFunction, masks: np.ndarray) -> np.ndarray:
    """Evaluate v on an array of bitmasks, via the batch fast path if present."""
    if v.batch_evaluate is not None:
        return _checked_array(v.batch_evaluate(masks.astype(np.uint64)), masks)
    out = np.empty(len(masks), dtype=float)
    for i, m in enumerate(masks):
        out[i] = _checked(v.evaluate(Coalition(int(m), v.n)), int(m))
    return out


def _popcounts(n: int) -> np.ndarray:
    """Bit counts of 0..2^n-1 as uint8."""
    masks = np.arange(1 << n, dtype=np.uint32)
    return np.unpackbits(masks.view(np.uint8).reshape(-1, 4), axis=1).sum(axis=1).astype(np.uint8)


def _shapley_weights(n: int) -> np.ndarray:
    """w[s] = s! (n-s-1)! / n! for s = 0..n-1, via log-factorials."""
    s = np.arange(n, dtype=float)
    logw = _lgamma(s + 1.0) + _lgamma(n - s) - _lgamma(n + 1.0)
    return np.exp(logw)


def _lgamma(x):
    return np.vectorize(math.lgamma)(x)


def exact_shapley(v: ValueFunction, *, max_players: int = EXACT_PLAYER_CAP,
                  batch_size: int = 8192) -> Attribution:
    """Exact Shapley values by enumeration of all 2^n coalitions.

    Each coalition value is evaluated exactly once and shared across players.
    Raises PlayerCountExceeded for n above ``max_players``.
    """
    n = v.n
    if n > max_players:
        raise PlayerCountExceeded(f"exact enumeration rejected for n={n} > {max_players}")

    total = 1 << n
    cache = np.empty(total, dtype=float)
    for start in range(0, total, batch_size):
        masks = np.arange(start, min(start + batch_size, total), dtype=np.uint64)
        cache[start:start + len(masks)] = _evaluate_masks(v, masks)

    sizes = _popcounts(n)
    weights = _shapley_weights(n)
    all_masks = np.arange(total, dtype=np.int64)

    values = np.empty(n, dtype=float)
    for i in range(n):
        without = all_masks[((all_masks >> i) & 1) == 0]
        w = weights[sizes[without]]
        values[i] = float(np.dot(w, cache[without | (1 << i)] - cache[without]))

    return Attribution(
        values=values,
        std_errors=np.zeros(n),
        v_full=float(cache[total - 1]),
        v_empty=float(cache[0]),
        method="exact",
        num_samples=0,
    )


def _permutation_chunk(seed: int, chunk_index: int, n: int, rows: int) -> np.ndarray:
    """Permutations for indices [chunk*CHUNK, chunk*CHUNK + rows)."""
    from .rng import DOMAIN_PERMUTATIONS, substream

    rng = substream(seed, DOMAIN_PERMUTATIONS, chunk_index)
    base = np.tile(np.arange(n), (_PERMUTATION_CHUNK, 1))
    return rng.permuted(base, axis=1)[:rows]


def mc_shapley(v: ValueFunction, num_samples: int, seed: int,
               *, max_players: int = MAX_PLAYERS) -> Attribution:
    """Monte-Carlo Shapley values by permutation sampling.

    Each sample is one uniformly random player ordering; walking the ordering
    yields one marginal contribution per player, so a sample costs n+1 value
    evaluations. values[i] is the sample mean over orderings and std_errors[i]
    the standard error of that mean. Deterministic given (v, num_samples, seed):
    permutation p is always drawn from the substream keyed on (seed, p's chunk),
    so results do not depend on evaluation scheduling.
    """
    n = v.n
    if n > max_players:
        raise PlayerCountExceeded(f"monte-carlo sampling rejected for n={n} > {max_players}")
    if num_samples < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {num_samples}")

    marginals = np.empty((num_samples, n), dtype=float)
    full_mask = (1 << n) - 1

    done = 0
    chunk_index = 0
    while done < num_samples:
        rows = min(_PERMUTATION_CHUNK, num_samples - done)
        perms = _permutation_chunk(seed, chunk_index, n, rows)

        # Prefix chain of each permutation: empty set, then each prefix.
        bits = (np.uint64(1) << perms.astype(np.uint64))
        chains = np.empty((rows, n + 1), dtype=np.uint64)
        chains[:, 0] = 0
        np.bitwise_or.accumulate(bits, axis=1, out=chains[:, 1:])

        flat = _evaluate_masks(v, chains.reshape(-1)).reshape(rows, n + 1)
        deltas = np.diff(flat, axis=1)
        np.put_along_axis(marginals[done:done + rows], perms, deltas, axis=1)

        done += rows
        chunk_index += 1

    values = marginals.mean(axis=0)
    std_errors = marginals.std(axis=0, ddof=1) / math.sqrt(num_samples)

    endpoints = _evaluate_masks(v, np.array([full_mask, 0], dtype=np.uint64))
    return Attribution(
        values=values,
        std_errors=std_errors,
        v_full=float(endpoints[0]),
        v_empty=float(endpoints[1]),
        method="monte-carlo",
        num_samples=num_samples,
    )


def table_game(values: np.ndarray, name: str = "table") -> ValueFunction:
    """Game backed by a dense table indexed by coalition bitmask (len 2^n)."""
    values = np.asarray(values, dtype=float)
    n = int(math.log2(len(values)))
    if len(values) != 1 << n:
        raise ValueError("table length must be a power of two")
    return ValueFunction(
        n=n,
        evaluate=lambda c: float(values[c.members]),
        batch_evaluate=lambda masks: values.take(masks.astype(np.int64)),
        name=name,
    )


def additive_game(weights: Sequence[float]) -> ValueFunction:
    """v(S) = sum of per-player weights over S."""
    w = np.asarray(weights, dtype=float)
    n = len(w)
    idx = np.arange(1 << n)
    table = np.zeros(1 << n)
    for i in range(n):
        table += w[i] * ((idx >> i) & 1)
    return table_game(table, name="additive")


def random_game(n: int, seed: int) -> ValueFunction:
    """Random game with v(empty)=0 and iid uniform values elsewhere."""
    from .rng import DOMAIN_GAMES, substream

    rng = substream(seed, DOMAIN_GAMES, n)
    table = rng.uniform(-1.0, 1.0, size=1 << n)
    table[0] = 0.0
    return table_game(table, name=f"random(n={n},seed={seed})")
