import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bsa.ema import (
    alpha_powers,
    batched_momentum,
    build_unfolding_matrix,
    cutoff_frequency,
    cutoff_period,
    ema_update,
    sequential_momentum,
    unfold,
)
from bsa.errors import DimensionError, DomainError


@st.composite
def alpha_vectors(draw, max_k=5, lo=0.01, hi=0.999):
    K = draw(st.integers(1, max_k))
    vals = sorted(set(draw(st.lists(st.floats(lo, hi), min_size=K, max_size=K, unique=True))))
    return np.array(vals)


def naive_unfolding(alpha, B):
    # closed form written out term by term, powers via math.pow
    A = np.zeros((B + 1, B + 1))
    for p in range(B + 1):
        A[p, 0] = math.pow(alpha, p)
        for q in range(1, p + 1):
            A[p, q] = (1 - alpha) * math.pow(alpha, p - q)
    return A


def test_ema_update_single_step():
    # [TRIVIAL] 0.5 * 2 + 0.5 * 4 = 3; 0.9 * 2 + 0.1 * 4 = 2.2
    M = np.array([[2.0], [2.0]])
    out = ema_update(M, np.array([4.0]), [0.5, 0.9])
    np.testing.assert_allclose(out, [[3.0], [2.2]], rtol=0, atol=1e-15)


def test_ema_update_fixed_point():
    # [TRIVIAL] a constant stream leaves a momentum equal to it unchanged
    F = np.array([1.5, -2.0])
    M = np.tile(F, (3, 1))
    np.testing.assert_array_equal(ema_update(M, F, [0.9, 0.99, 0.999]), M)


@pytest.mark.parametrize("alphas", [[0.99, 0.9], [0.9, 0.9], [0.0, 0.5], [0.5, 1.0]])
def test_ema_update_rejects_bad_alphas(alphas):
    with pytest.raises(DomainError):
        ema_update(np.zeros((2, 1)), np.zeros(1), alphas)


def test_ema_update_shape_mismatch():
    with pytest.raises(DimensionError):
        ema_update(np.zeros((2, 3)), np.zeros(2), [0.5, 0.9])


def test_cutoff_period_at_0999():
    # [PAPER] the slowest default filter keeps trends of roughly 6000 steps
    # [DERIVED] acos(1 - 1e-6 / 1.998) / (2 pi) evaluated independently with mpmath
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 40
    a = mpmath.mpf("0.999")
    ref = 2 * mpmath.pi / mpmath.acos(1 - (1 - a) ** 2 / (2 * a))
    assert 6000 <= cutoff_period(0.999) <= 6600
    assert cutoff_period(0.999) == pytest.approx(float(ref), rel=1e-9)


def test_cutoff_small_alpha_saturates_at_nyquist():
    # [TRIVIAL] below 3 - 2 sqrt 2 the half-power point would lie past 0.5 cycles/step
    assert cutoff_frequency(0.1) == pytest.approx(0.5)
    assert cutoff_frequency(3 - 2 * math.sqrt(2) + 1e-9) == pytest.approx(0.5, abs=1e-4)


def test_cutoff_rejects_out_of_range():
    for a in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(DomainError):
            cutoff_frequency(a)


@given(st.floats(0.172, 0.9999), st.floats(1e-4, 0.02))
def test_cutoff_frequency_decreases_with_alpha(a, step):
    b = min(a + step, 0.99995)
    if b > a:
        assert cutoff_frequency(b) < cutoff_frequency(a)


def test_cutoff_limit_towards_one():
    # [TRIVIAL] frequency -> 0 as alpha -> 1
    freqs = [cutoff_frequency(1 - 10.0**-e) for e in range(1, 8)]
    assert all(f2 < f1 for f1, f2 in zip(freqs, freqs[1:]))
    assert freqs[-1] < 1e-7


def test_alpha_powers_matches_pow():
    a = np.array([0.3, 0.95])
    P = alpha_powers(a, 12)
    np.testing.assert_allclose(P, a[:, None] ** np.arange(13)[None], rtol=1e-14)


def test_unfolding_matrix_small_case():
    # [DERIVED] B=2, alpha=0.5 worked by hand:
    # row0 = [1, 0, 0]; row1 = [.5, .5, 0]; row2 = [.25, .25, .5]
    A = build_unfolding_matrix([0.5], 2)[0]
    np.testing.assert_allclose(A, [[1, 0, 0], [0.5, 0.5, 0], [0.25, 0.25, 0.5]], atol=1e-16)


@given(alpha_vectors(), st.integers(1, 64))
def test_unfolding_rows_sum_to_one(alphas, B):
    A = build_unfolding_matrix(alphas, B)
    assert A.shape == (alphas.size, B + 1, B + 1)
    np.testing.assert_allclose(A.sum(axis=2), 1.0, rtol=0, atol=1e-12)


@given(alpha_vectors(), st.integers(1, 40))
def test_unfolding_matches_closed_form(alphas, B):
    A = build_unfolding_matrix(alphas, B)
    for k, a in enumerate(alphas):
        np.testing.assert_allclose(A[k], naive_unfolding(a, B), rtol=1e-12, atol=1e-300)
    # strictly upper triangle is exactly zero
    assert np.all(A[:, np.triu_indices(B + 1, 1)[0], np.triu_indices(B + 1, 1)[1]] == 0.0)


def test_unfolding_rejects_empty_batch():
    with pytest.raises(DomainError):
        build_unfolding_matrix([0.5], 0)


@given(alpha_vectors(), st.integers(1, 48), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_batched_equals_sequential(alphas, B, D, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(alphas.size, D))
    F = rng.normal(size=(B, D))
    seq = sequential_momentum(M, F, alphas)
    got = batched_momentum(M, F, alphas)
    assert got.shape == (B + 1, alphas.size, D)
    np.testing.assert_allclose(got, seq, rtol=0, atol=1e-10)


def test_sequential_oracle_is_repeated_update(rng):
    # the reference loop really is ema_update applied B times
    alphas = [0.2, 0.7]
    M = rng.normal(size=(2, 3))
    F = rng.normal(size=(5, 3))
    traj = sequential_momentum(M, F, alphas)
    cur = M
    for b in range(5):
        np.testing.assert_array_equal(traj[b], cur)
        cur = ema_update(cur, F[b], alphas)
    np.testing.assert_array_equal(traj[5], cur)


def test_unfold_row_zero_is_carry(rng):
    alphas = np.array([0.5, 0.9])
    A = build_unfolding_matrix(alphas, 4)
    M = rng.normal(size=(2, 3))
    traj = unfold(A, M, rng.normal(size=(4, 3)))
    np.testing.assert_array_equal(traj[0], M)
