"""Mixture-consistency projection: exactness, optimality, oracle match."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixsep import autodiff as ad
from mixsep.consistency import mixture_consistency_project, project_array
from mixsep.errors import InputError
from mixsep.signal import SourceSet, Waveform

RATE = 8000


def lsq_projection_oracle(raw, mixture):
    """Equality-constrained least squares via an affine-subspace projection.

    Stack the M estimates into one vector v and solve
    min ||v - raw||^2 subject to B v = mixture, where B sums the M blocks.
    The projector is v = raw + B^T (B B^T)^{-1} (mixture - B raw).
    """
    M, T = raw.shape
    v = raw.reshape(-1)
    B = np.concatenate([np.eye(T)] * M, axis=1)
    resid = mixture - B @ v
    correction = B.T @ np.linalg.solve(B @ B.T, resid)
    return (v + correction).reshape(M, T)


def test_already_consistent_is_unchanged():
    rng = np.random.default_rng(50)
    raw = rng.standard_normal((3, 16))
    x = raw.sum(axis=0)
    np.testing.assert_array_equal(project_array(raw, x), raw)


def test_symmetric_residual_split():
    out = project_array(np.array([[0.5], [0.5]]), np.array([2.0]))
    np.testing.assert_array_equal(out, [[1.0], [1.0]])


def test_matches_constrained_least_squares_oracle():
    rng = np.random.default_rng(51)
    for _ in range(100):
        m = int(rng.integers(1, 5))
        t = int(rng.integers(2, 12))
        raw = rng.standard_normal((m, t))
        x = rng.standard_normal(t)
        got = project_array(raw, x)
        want = lsq_projection_oracle(raw, x)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-10)


@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 6))
@settings(max_examples=50, deadline=None)
def test_sum_and_idempotence(seed, m):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((m, 32))
    x = rng.standard_normal(32)
    once = project_array(raw, x)
    scale = max(1.0, float(np.abs(x).max()))
    np.testing.assert_allclose(once.sum(axis=0), x, rtol=0, atol=1e-10 * scale)
    twice = project_array(once, x)
    np.testing.assert_allclose(twice, once, rtol=0, atol=1e-12)


def test_projection_is_nearest_consistent_point():
    rng = np.random.default_rng(52)
    raw = rng.standard_normal((4, 16))
    x = rng.standard_normal(16)
    proj = project_array(raw, x)
    base = np.sum(np.square(proj - raw))
    for _ in range(20):
        delta = rng.standard_normal((4, 16))
        delta -= delta.mean(axis=0, keepdims=True)  # keeps the sum fixed
        perturbed = np.sum(np.square(proj + delta - raw))
        assert base <= perturbed + 1e-12


def test_joint_linearity():
    rng = np.random.default_rng(53)
    raw1, raw2 = rng.standard_normal((2, 3, 8))
    x1, x2 = rng.standard_normal((2, 8))
    a, b = 1.7, -0.6
    combined = project_array(a * raw1 + b * raw2, a * x1 + b * x2)
    split = a * project_array(raw1, x1) + b * project_array(raw2, x2)
    np.testing.assert_allclose(combined, split, rtol=0, atol=1e-12)


def test_gradient_through_projection():
    rng = np.random.default_rng(54)
    raw = ad.Tensor(rng.standard_normal((3, 12)), requires_grad=True)
    x = ad.Tensor(rng.standard_normal(12))
    weight = ad.Tensor(rng.standard_normal((3, 12)))

    def build():
        resid = x - raw.sum(axis=0)
        proj = raw + resid * (1.0 / 3.0)
        return ad.square(proj * weight).sum()

    assert ad.gradcheck(build, [raw]) <= 1e-6


def test_source_set_interface_and_errors():
    rng = np.random.default_rng(55)
    raw = SourceSet.from_array(rng.standard_normal((2, 8)), RATE)
    x = Waveform(rng.standard_normal(8), RATE)
    out = mixture_consistency_project(raw, x)
    np.testing.assert_allclose(
        out.as_array().sum(axis=0), x.samples, atol=1e-12
    )
    with pytest.raises(InputError):
        mixture_consistency_project(raw, Waveform(np.ones(9), RATE))
    with pytest.raises(InputError):
        mixture_consistency_project(raw, Waveform(np.ones(8), 16000))
