"""Masked matrix-multiplication useful-work backend.

A requester wanting ``Z = X @ Y`` computed privately masks the inputs with
low-rank matrices ``E = U_e @ V_e`` and ``F = U_f @ V_f`` and publishes
``X' = X + E`` and ``Y' = Y + F``. A prover multiplies the masked matrices
block by block in a seed-determined order, recording every intermediate full
matrix, which pins the computation to the block template the seed came from.
The requester removes the masks with O(k * m^2) extra work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hashing import sha256, shuffle
from .training import ShapeError


@dataclass(frozen=True)
class LowRankMask:
    """Rank-k mask held in factored form: ``dense() == left @ right``.

    ``left`` is (m, k) and ``right`` is (k, m). Keeping the factors explicit
    is what bounds unmasking cost at O(k * m^2); consumers should multiply
    through the factors, never through ``dense()``.
    """

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        if self.left.ndim != 2 or self.right.ndim != 2:
            raise ShapeError("mask factors must be 2-D")
        if self.left.shape[1] != self.right.shape[0]:
            raise ShapeError("mask factor inner dimensions disagree")

    @property
    def rank(self) -> int:
        return self.left.shape[1]

    def dense(self) -> np.ndarray:
        return self.left @ self.right

    @classmethod
    def random(cls, m: int, rank: int, rng: np.random.Generator, integer: bool = False) -> "LowRankMask":
        if integer:
            left = rng.integers(-3, 4, size=(m, rank)).astype(np.int64)
            right = rng.integers(-3, 4, size=(rank, m)).astype(np.int64)
        else:
            left = rng.standard_normal((m, rank))
            right = rng.standard_normal((rank, m))
        return cls(left=left, right=right)


@dataclass(frozen=True)
class MatMulTaskSpec:
    """Masked multiplication task: masked operands plus the block size ``r``."""

    xp: np.ndarray
    yp: np.ndarray
    r: int
    mask_rank: int = 1

    def __post_init__(self):
        m = self.xp.shape[0]
        if self.xp.shape != (m, m) or self.yp.shape != (m, m):
            raise ShapeError("masked operands must be square and equal-sized")
        if self.r < 1 or m % self.r != 0:
            raise ShapeError("block size must divide the matrix dimension")

    @property
    def m(self) -> int:
        return self.xp.shape[0]

    @property
    def steps(self) -> int:
        return self.m // self.r

    def to_bytes(self) -> bytes:
        header = self.m.to_bytes(4, "big") + self.r.to_bytes(4, "big")
        return header + self.xp.astype(">f8").tobytes() + self.yp.astype(">f8").tobytes()

    def summary(self) -> bytes:
        return sha256(self.to_bytes())


@dataclass(frozen=True)
class MatMulTrace:
    """All intermediate full matrices of one seeded block-order multiplication."""

    permutation: tuple[int, ...]
    intermediates: tuple[np.ndarray, ...]

    @property
    def final(self) -> np.ndarray:
        return self.intermediates[-1]

    def to_bytes(self) -> bytes:
        parts = [len(self.permutation).to_bytes(4, "big")]
        parts += [a.to_bytes(4, "big") for a in self.permutation]
        parts += [z.astype(">f8").tobytes() for z in self.intermediates]
        return b"".join(parts)

    def summary(self) -> bytes:
        return sha256(self.to_bytes())


def mask_inputs(
    x: np.ndarray, y: np.ndarray, e: LowRankMask | np.ndarray, f: LowRankMask | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Additively mask both operands; returns (X + E, Y + F)."""
    e_dense = e.dense() if isinstance(e, LowRankMask) else e
    f_dense = f.dense() if isinstance(f, LowRankMask) else f
    if x.shape != e_dense.shape or y.shape != f_dense.shape or x.shape != y.shape:
        raise ShapeError("operands and masks must share one square shape")
    return x + e_dense, y + f_dense


def matmul_trace(spec: MatMulTaskSpec, seed: int) -> MatMulTrace:
    """Compute X' @ Y' block-column by block-column in seed-shuffled order.

    Step ``l`` adds the contribution of block index ``a_l`` to every (i, j)
    output block; the running full matrix after each step is recorded. The
    final intermediate equals the dense product regardless of the seed, but
    the intermediate sequence depends on it.
    """
    order = shuffle(spec.steps, seed)
    r = spec.r
    z = np.zeros_like(spec.xp)
    snapshots = []
    for a in order:
        cols = slice(a * r, (a + 1) * r)
        z = z + spec.xp[:, cols] @ spec.yp[cols, :]
        snapshots.append(z.copy())
    return MatMulTrace(permutation=tuple(order), intermediates=tuple(snapshots))


def verify_trace_step(
    spec: MatMulTaskSpec, trace: MatMulTrace, step: int, i: int, j: int, tol: float = 0.0
) -> bool:
    """Check one (step, block-row, block-col) cell of a recorded trace.

    Verifies ``Z^(l)[i,j] == Z^(l-1)[i,j] + X'[i, a_l] @ Y'[a_l, j]`` where
    step 0's predecessor is the zero matrix. ``tol`` is the max-abs slack for
    floating-point operands; exact comparison when 0.
    """
    r = spec.r
    a = trace.permutation[step]
    rows = slice(i * r, (i + 1) * r)
    cols = slice(j * r, (j + 1) * r)
    mid = slice(a * r, (a + 1) * r)
    prev = trace.intermediates[step - 1][rows, cols] if step > 0 else np.zeros((r, r))
    expected = prev + spec.xp[rows, mid] @ spec.yp[mid, cols]
    observed = trace.intermediates[step][rows, cols]
    if tol == 0.0:
        return bool(np.array_equal(observed, expected))
    return bool(np.max(np.abs(observed - expected)) <= tol)


def unmask(
    zp: np.ndarray, x: np.ndarray, e: LowRankMask, yp: np.ndarray, f: LowRankMask
) -> np.ndarray:
    """Recover ``X @ Y`` from the masked product ``Z' = (X+E)(Y+F)``.

    Subtracts ``X @ F + E @ Y'`` where each mask product is evaluated through
    the rank-k factors, so the correction costs O(k * m^2) multiply-adds.
    """
    if zp.shape != x.shape or zp.shape != yp.shape:
        raise ShapeError("operands must share one square shape")
    x_f = (x @ f.left) @ f.right
    e_yp = e.left @ (e.right @ yp)
    return zp - x_f - e_yp
