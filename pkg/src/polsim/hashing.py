"""Hash primitives, threshold tests, seed derivation and seeded shuffling.

Everything downstream (block summaries, role lotteries, stage seeds, dataset
shuffles) is built on the functions in this module, so they are kept small,
pure and bit-exactly reproducible:

* digests are SHA-256 (32 bytes), interpreted as big-endian unsigned integers,
* stage seeds are 64-bit values obtained by hash-then-truncate,
* the in-protocol PRNG is splitmix64, chosen because it is tiny and
  bit-identical across implementations; shuffles are Fisher-Yates driven by
  ``next_u64() % bound``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

DIGEST_BITS = 256
DIGEST_LEN = 32

_MASK64 = (1 << 64) - 1


class InvalidStageError(ValueError):
    """Raised when a stage index below 1 is used for seed derivation."""


class InvalidFlagError(ValueError):
    """Raised when a capture-the-flag value outside {0, 1, 2} is used."""


def sha256(data: bytes) -> bytes:
    """One-shot SHA-256 digest of ``data``."""
    return hashlib.sha256(data).digest()


def digest_int(digest: bytes) -> int:
    """Interpret a 32-byte digest as a big-endian unsigned integer."""
    if len(digest) != DIGEST_LEN:
        raise ValueError(f"expected {DIGEST_LEN}-byte digest, got {len(digest)}")
    return int.from_bytes(digest, "big")


def digest_hex(digest: bytes) -> str:
    return digest.hex()


ZERO_DIGEST = bytes(DIGEST_LEN)


@dataclass(frozen=True)
class Threshold:
    """Block-generation threshold: a digest passes iff its integer value < t_int."""

    p: float
    t_int: int

    @classmethod
    def from_probability(cls, p: float) -> "Threshold":
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability out of range: {p}")
        return cls(p=p, t_int=round(p * (1 << DIGEST_BITS)))


def meets_threshold(digest: bytes, threshold: Threshold) -> bool:
    """True iff the digest, read as a big-endian integer, is below the threshold."""
    return digest_int(digest) < threshold.t_int


def derive_seed(block_summary: bytes, stage: int) -> int:
    """Derive the 64-bit stage seed from a block summary and a stage index.

    The seed is the first 8 bytes (big-endian) of
    ``sha256(block_summary || stage_as_8_byte_big_endian)``.
    """
    if stage < 1:
        raise InvalidStageError(f"stage must be >= 1, got {stage}")
    if len(block_summary) != DIGEST_LEN:
        raise ValueError("block summary must be a 32-byte digest")
    digest = sha256(block_summary + stage.to_bytes(8, "big"))
    return int.from_bytes(digest[:8], "big")


def derive_ctf_seed(base_seed: int, flag: int) -> int:
    """Derive the effective seed for a flagged stage.

    First 8 bytes of ``sha256(base_seed_as_8_bytes || flag_as_1_byte)``; the
    three flag variants of one base seed are pairwise distinct in practice.
    """
    if flag not in (0, 1, 2):
        raise InvalidFlagError(f"flag must be 0, 1 or 2, got {flag}")
    digest = sha256(base_seed.to_bytes(8, "big") + bytes([flag]))
    return int.from_bytes(digest[:8], "big")


def subseed(seed: int, index: int) -> int:
    """Per-epoch sub-seed: first 8 bytes of sha256(seed || index), both 8-byte BE."""
    digest = sha256(seed.to_bytes(8, "big") + index.to_bytes(8, "big"))
    return int.from_bytes(digest[:8], "big")


class Prng:
    """splitmix64 pseudo-random stream.

    State update: ``s += 0x9E3779B97F4A7C15``; output mixing per the reference
    algorithm. Deliberately implemented over plain Python ints so two
    implementations of this protocol agree bit-for-bit.
    """

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Float in [0, 1) using the top 53 bits of the next output."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def randbelow(self, bound: int) -> int:
        """Integer in [0, bound) via ``next_u64() % bound``.

        Modulo bias is below 2**-40 for every bound used by the protocol
        (bounds are far smaller than 2**64) and keeps the mapping trivially
        portable.
        """
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates permutation of range(n), high index down to 1."""
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample(self, population: Sequence[int], k: int) -> list[int]:
        """k distinct elements of ``population``, order-independent of caller state."""
        if k > len(population):
            raise ValueError("sample larger than population")
        pool = list(population)
        for i in range(len(pool) - 1, len(pool) - 1 - k, -1):
            j = self.randbelow(i + 1)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[len(pool) - k:]


def shuffle(n: int, seed: int) -> list[int]:
    """Deterministic permutation of {0, ..., n-1} for a 64-bit seed.

    ``n == 0`` yields the empty permutation.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    return Prng(seed).permutation(n)
