"""Opposite-label sampling with a deterministic, platform-stable RNG.

SD mode draws uniformly from the complement of the true label's colony; RT
mode draws uniformly from all classes except the true label. Labels are
resampled fresh every training iteration.

SeededRng is the single random source used across the package. Bounded
integer draws take raw 64-bit PCG64 words and apply masked rejection
(reject values >= n after masking to the next power of two), so every value
in [0, n) is exactly equally likely - no modulo bias. The bulk path
``randint_below_many`` consumes the word stream exactly as the equivalent
sequence of scalar calls would, which keeps vectorized statistics tests and
scalar training draws on one stream contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .taxonomy import SemanticPrior

SD = "SD"
RT = "RT"

_WORD_BLOCK = 65536


@dataclass(frozen=True)
class OppositeLabel:
    """A sampled not-this-class label and the scenario that produced it."""

    value: int
    mode: str


class SeededRng:
    """Deterministic random source: PCG64 words plus masked rejection.

    Two child streams are derived from the seed via numpy's SeedSequence:
    one feeds bounded integer draws, the other floats/normals/permutations.
    Keeping them separate means the word buffer never interleaves with
    float draws, so each method family has a stable stream of its own.
    Same (seed, call sequence) gives the same outputs on every platform.
    """

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        word_ss, float_ss = ss.spawn(2)
        self._words = np.random.Generator(np.random.PCG64(word_ss))
        self._floats = np.random.Generator(np.random.PCG64(float_ss))
        self._buf = np.empty(0, dtype=np.uint64)
        self._pos = 0

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, spawn_key={self.spawn_key})"

    def spawn(self, *tags: int) -> "SeededRng":
        """Independent child stream, e.g. per worker or per repetition."""
        return SeededRng(self.seed, self.spawn_key + tags)

    def _refill(self) -> None:
        self._buf = self._words.integers(
            0, 2**64, size=_WORD_BLOCK, dtype=np.uint64
        )
        self._pos = 0

    def next_word(self) -> int:
        """Next raw 64-bit word from the integer stream."""
        if self._pos >= self._buf.size:
            self._refill()
        w = int(self._buf[self._pos])
        self._pos += 1
        return w

    def randint_below(self, n: int) -> int:
        """Uniform integer in [0, n) by masked rejection."""
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        mask = (1 << (n - 1).bit_length()) - 1 if n > 1 else 0
        while True:
            v = self.next_word() & mask
            if v < n:
                return v

    def randint_below_many(self, n: int, size: int) -> np.ndarray:
        """Vectorized randint_below: same values, same words consumed."""
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        if size < 0:
            raise ValueError(f"size must be non-negative, got {size}")
        mask = np.uint64((1 << (n - 1).bit_length()) - 1 if n > 1 else 0)
        out = np.empty(size, dtype=np.int64)
        filled = 0
        while filled < size:
            if self._pos >= self._buf.size:
                self._refill()
            window = self._buf[self._pos :] & mask
            ok = window < n
            accepted = window[ok]
            need = size - filled
            if accepted.size >= need:
                # advance exactly past the word that produced draw `need`
                last = int(np.flatnonzero(ok)[need - 1])
                out[filled:] = accepted[:need].astype(np.int64)
                self._pos += last + 1
                filled = size
            else:
                out[filled : filled + accepted.size] = accepted.astype(np.int64)
                filled += accepted.size
                self._pos = self._buf.size
        return out

    # Float-stream helpers (separate PCG64 child; see class docstring).

    def random(self, size=None):
        return self._floats.random(size)

    def normal(self, size=None):
        return self._floats.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._floats.permutation(n)


def sample_opposite_sd(
    prior: SemanticPrior, y: int, rng: SeededRng
) -> OppositeLabel:
    """Uniform draw from the opposite pool [c] \\ colony(y)."""
    pool = prior.opposite_pool_array(y)
    value = int(pool[rng.randint_below(pool.size)])
    assert prior.colony_index_of(value) != prior.colony_index_of(y)
    return OppositeLabel(value=value, mode=SD)


def sample_opposite_rt(class_count: int, y: int, rng: SeededRng) -> OppositeLabel:
    """Uniform draw from all classes except y (one bounded draw)."""
    if class_count < 2:
        raise ValueError(f"need at least 2 classes, got {class_count}")
    if not 0 <= y < class_count:
        raise ValueError(f"class id {y} out of range [0, {class_count})")
    v = rng.randint_below(class_count - 1)
    if v >= y:
        v += 1
    assert v != y
    return OppositeLabel(value=v, mode=RT)


def sample_opposite_sd_many(
    prior: SemanticPrior, y: int, rng: SeededRng, size: int
) -> np.ndarray:
    """Bulk SD draws for one true label; equals `size` scalar draws."""
    pool = prior.opposite_pool_array(y)
    return pool[rng.randint_below_many(pool.size, size)]


def resample_per_iteration(
    batch: "list[int] | np.ndarray",
    prior: SemanticPrior,
    rng: SeededRng,
    mode: str,
) -> list[OppositeLabel]:
    """One fresh opposite label per element, consumed in batch order."""
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    if mode == SD:
        return [sample_opposite_sd(prior, int(y), rng) for y in batch]
    if mode == RT:
        c = prior.class_count
        return [sample_opposite_rt(c, int(y), rng) for y in batch]
    raise ValueError(f"mode must be 'SD' or 'RT', got {mode!r}")
