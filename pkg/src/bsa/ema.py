"""EMA filter-bank arithmetic.

A bank of K exponential moving averages tracks a D-dimensional feature
stream.  Row ``k`` of a momentum bank is the EMA with smoothing factor
``alphas[k]``::

    M[k] <- alphas[k] * M[k] + (1 - alphas[k]) * F

Running B of those updates back to back is a linear map of the starting
momentum and the B inputs; ``build_unfolding_matrix`` materialises that map
so a whole mini-batch of momenta comes out of one contraction.

Everything here is stateless float64 numpy.
"""

from __future__ import annotations

import math

import numpy as np

from bsa.errors import DimensionError, DomainError


def _as_alphas(alphas, *, increasing: bool) -> np.ndarray:
    a = np.atleast_1d(np.asarray(alphas, dtype=np.float64))
    if a.ndim != 1 or a.size == 0:
        raise DimensionError(f"alphas must be a non-empty 1-d sequence, got shape {a.shape}")
    if not np.all((a > 0.0) & (a < 1.0)):
        raise DomainError(f"smoothing factors must lie in (0, 1), got {a.tolist()}")
    if increasing and a.size > 1 and not np.all(np.diff(a) > 0):
        raise DomainError(f"smoothing factors must be strictly increasing, got {a.tolist()}")
    return a


def ema_update(M, F, alphas) -> np.ndarray:
    """One EMA step for every factor in the bank.

    Parameters
    ----------
    M : (K, D) array
        Momentum before the step.
    F : (D,) array
        Feature observed at this step.
    alphas : (K,) array
        Smoothing factors, strictly increasing, each in (0, 1).
    """
    a = _as_alphas(alphas, increasing=True)
    M = np.asarray(M, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    if M.ndim != 2 or F.ndim != 1 or M.shape != (a.size, F.size):
        raise DimensionError(
            f"expected M of shape ({a.size}, D) and F of shape (D,), got {M.shape} and {F.shape}"
        )
    return a[:, None] * M + (1.0 - a[:, None]) * F[None, :]


def cutoff_frequency(alpha: float) -> float:
    """-3 dB cut-off of the one-pole EMA low-pass, in cycles per step."""
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    arg = 1.0 - (1.0 - alpha) ** 2 / (2.0 * alpha)
    # below alpha = 3 - 2*sqrt(2) the half-power point is past Nyquist
    arg = max(arg, -1.0)
    return math.acos(arg) / (2.0 * math.pi)


def cutoff_period(alpha: float) -> float:
    """Reciprocal of :func:`cutoff_frequency`: the shortest period the filter passes at half power."""
    return 1.0 / cutoff_frequency(alpha)


def alpha_powers(alphas, n: int) -> np.ndarray:
    """``out[k, p] = alphas[k] ** p`` for p = 0..n, by repeated multiplication."""
    a = np.asarray(alphas, dtype=np.float64)
    out = np.empty((a.size, n + 1), dtype=np.float64)
    out[:, 0] = 1.0
    for p in range(1, n + 1):
        out[:, p] = out[:, p - 1] * a
    return out


def build_unfolding_matrix(alphas, B: int) -> np.ndarray:
    """Lower-triangular operator that unrolls B EMA steps.

    Returns ``A`` of shape (K, B+1, B+1) with::

        A[k, p, 0] = alpha_k ** p
        A[k, p, q] = (1 - alpha_k) * alpha_k ** (p - q)    for 1 <= q <= p
        A[k, p, q] = 0                                      for q > p

    so that ``A[k] @ concat(M_t[k], F_batch)`` stacks M_t, M_{t+1}, ..., M_{t+B}.
    """
    if int(B) != B or B < 1:
        raise DomainError(f"batch length must be a positive integer, got {B}")
    B = int(B)
    a = _as_alphas(alphas, increasing=False)
    pw = alpha_powers(a, B)
    p = np.arange(B + 1)
    lag = p[:, None] - p[None, :]
    lower = lag >= 0
    A = np.where(lower[None], pw[:, np.clip(lag, 0, B)], 0.0)
    A[:, :, 1:] *= (1.0 - a)[:, None, None]
    return A


def batched_momentum(M_t, F_batch, alphas) -> np.ndarray:
    """Momentum trajectory over a mini-batch, computed by one contraction.

    Parameters
    ----------
    M_t : (K, D) array
        Momentum carried in from before the batch.
    F_batch : (B, D) array
        Consecutive features.
    alphas : (K,) array

    Returns
    -------
    (B+1, K, D) array
        ``out[0] = M_t``; ``out[b]`` is the momentum after b updates, so
        ``out[B]`` is the carry for the next batch.
    """
    M_t = np.asarray(M_t, dtype=np.float64)
    F_batch = np.asarray(F_batch, dtype=np.float64)
    a = np.atleast_1d(np.asarray(alphas, dtype=np.float64))
    if F_batch.ndim != 2 or M_t.ndim != 2 or M_t.shape != (a.size, F_batch.shape[1]):
        raise DimensionError(
            f"expected M_t ({a.size}, D) and F_batch (B, D), got {M_t.shape} and {F_batch.shape}"
        )
    A = build_unfolding_matrix(a, F_batch.shape[0])
    return unfold(A, M_t, F_batch)


def unfold(A: np.ndarray, M_t: np.ndarray, F_batch: np.ndarray) -> np.ndarray:
    """Apply a prebuilt unfolding matrix; returns (B+1, K, D)."""
    K = A.shape[0]
    # Z[k] = concat(M_t[k], F_batch): (K, B+1, D)
    Z = np.concatenate([M_t[:, None, :], np.broadcast_to(F_batch, (K,) + F_batch.shape)], axis=1)
    return np.matmul(A, Z).transpose(1, 0, 2)


def sequential_momentum(M_t, F_batch, alphas) -> np.ndarray:
    """Reference loop: B explicit EMA steps. Same contract as :func:`batched_momentum`."""
    M = np.array(M_t, dtype=np.float64)
    F_batch = np.asarray(F_batch, dtype=np.float64)
    a = np.asarray(alphas, dtype=np.float64)[:, None]
    out = [M.copy()]
    for f in F_batch:
        M = a * M + (1.0 - a) * f[None, :]
        out.append(M.copy())
    return np.stack(out)
