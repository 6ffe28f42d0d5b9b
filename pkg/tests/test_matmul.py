import numpy as np
import pytest

from polsim.matmul import (
    LowRankMask,
    MatMulTaskSpec,
    MatMulTrace,
    mask_inputs,
    matmul_trace,
    unmask,
    verify_trace_step,
)
from polsim.training import ShapeError


def zero_mask(m):
    return LowRankMask(left=np.zeros((m, 1)), right=np.zeros((1, m)))


def test_mask_inputs_zero_masks_identity():
    x = np.arange(16.0).reshape(4, 4)
    y = np.eye(4)
    xp, yp = mask_inputs(x, y, zero_mask(4), zero_mask(4))
    assert np.array_equal(xp, x)
    assert np.array_equal(yp, y)


def test_mask_inputs_rank1_elementwise_sum():
    rng = np.random.default_rng(0)
    x = rng.integers(-5, 5, size=(4, 4)).astype(float)
    y = rng.integers(-5, 5, size=(4, 4)).astype(float)
    e = LowRankMask.random(4, 1, rng)
    f = LowRankMask.random(4, 1, rng)
    xp, yp = mask_inputs(x, y, e, f)
    assert np.allclose(xp, x + e.dense())
    assert np.allclose(yp, y + f.dense())


def test_mask_inputs_shape_error():
    with pytest.raises(ShapeError):
        mask_inputs(np.zeros((4, 4)), np.zeros((3, 3)), zero_mask(4), zero_mask(3))


def test_single_block_trace():
    rng = np.random.default_rng(1)
    xp = rng.standard_normal((4, 4))
    yp = rng.standard_normal((4, 4))
    spec = MatMulTaskSpec(xp=xp, yp=yp, r=4)
    trace = matmul_trace(spec, seed=9)
    assert len(trace.intermediates) == 1
    assert np.allclose(trace.final, xp @ yp)


def test_identity_blocks():
    spec = MatMulTaskSpec(xp=np.eye(4), yp=np.eye(4), r=2)
    trace = matmul_trace(spec, seed=5)
    assert np.allclose(trace.final, np.eye(4))


def test_two_seeds_same_product_different_traces():
    rng = np.random.default_rng(2)
    xp = rng.standard_normal((8, 8))
    yp = rng.standard_normal((8, 8))
    spec = MatMulTaskSpec(xp=xp, yp=yp, r=2)
    t1 = matmul_trace(spec, seed=111)
    t2 = matmul_trace(spec, seed=222)
    assert np.allclose(t1.final, t2.final)
    assert t1.permutation != t2.permutation
    assert any(
        not np.allclose(a, b) for a, b in zip(t1.intermediates[:-1], t2.intermediates[:-1])
    )
    assert t1.summary() != t2.summary()


def test_trace_against_dense_oracle_integer():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.integers(-9, 10, size=(8, 8)).astype(np.int64)
        y = rng.integers(-9, 10, size=(8, 8)).astype(np.int64)
        spec = MatMulTaskSpec(xp=x.astype(float), yp=y.astype(float), r=2)
        trace = matmul_trace(spec, seed=int(rng.integers(0, 2 ** 63)))
        assert np.array_equal(trace.final, (x @ y).astype(float))


def test_unmask_recovers_integer_product_exactly():
    rng = np.random.default_rng(4)
    x = rng.integers(-8, 9, size=(8, 8)).astype(float)
    y = rng.integers(-8, 9, size=(8, 8)).astype(float)
    e = LowRankMask.random(8, 1, rng, integer=True)
    f = LowRankMask.random(8, 2, rng, integer=True)
    xp, yp = mask_inputs(x, y, e, f)
    spec = MatMulTaskSpec(xp=xp, yp=yp, r=4)
    z = unmask(matmul_trace(spec, seed=77).final, x, e, yp, f)
    assert np.array_equal(z, x @ y)


def test_unmask_real_case_tolerance():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((16, 16))
    y = rng.standard_normal((16, 16))
    e = LowRankMask.random(16, 2, rng)
    f = LowRankMask.random(16, 2, rng)
    xp, yp = mask_inputs(x, y, e, f)
    spec = MatMulTaskSpec(xp=xp, yp=yp, r=4)
    z = unmask(matmul_trace(spec, seed=13).final, x, e, yp, f)
    assert np.max(np.abs(z - x @ y)) <= 1e-9


def test_unmask_zero_masks_pass_through():
    rng = np.random.default_rng(7)
    zp = rng.standard_normal((4, 4))
    x = rng.standard_normal((4, 4))
    yp = rng.standard_normal((4, 4))
    assert np.allclose(unmask(zp, x, zero_mask(4), yp, zero_mask(4)), zp)


def test_unmask_never_touches_dense_mask(monkeypatch):
    # The correction must go through the factors, not a dense m x m mask.
    rng = np.random.default_rng(8)
    x = rng.standard_normal((8, 8))
    y = rng.standard_normal((8, 8))
    e = LowRankMask.random(8, 1, rng)
    f = LowRankMask.random(8, 1, rng)
    xp, yp = mask_inputs(x, y, e, f)

    def boom(self):
        raise AssertionError("dense mask materialized during unmask")

    monkeypatch.setattr(LowRankMask, "dense", boom)
    spec = MatMulTaskSpec(xp=xp, yp=yp, r=2)
    z = unmask(matmul_trace(spec, seed=3).final, x, e, yp, f)
    assert np.max(np.abs(z - x @ y)) <= 1e-9


def test_verify_trace_step_accepts_honest_and_rejects_perturbed():
    rng = np.random.default_rng(9)
    xp = rng.integers(-5, 6, size=(8, 8)).astype(float)
    yp = rng.integers(-5, 6, size=(8, 8)).astype(float)
    spec = MatMulTaskSpec(xp=xp, yp=yp, r=2)
    trace = matmul_trace(spec, seed=21)
    for step in range(spec.steps):
        for i in range(spec.steps):
            for j in range(spec.steps):
                assert verify_trace_step(spec, trace, step, i, j)

    # Perturb one block of one intermediate; that cell must fail.
    step, i, j = 1, 2, 3
    tampered = [z.copy() for z in trace.intermediates]
    tampered[step][i * 2 : (i + 1) * 2, j * 2 : (j + 1) * 2] += 1.0
    bad = MatMulTrace(permutation=trace.permutation, intermediates=tuple(tampered))
    assert not verify_trace_step(spec, bad, step, i, j)
    # The same perturbation also breaks the successor step's check at that cell.
    assert not verify_trace_step(spec, bad, step + 1, i, j)


def test_spec_rejects_bad_block_size():
    with pytest.raises(ShapeError):
        MatMulTaskSpec(xp=np.eye(4), yp=np.eye(4), r=3)
