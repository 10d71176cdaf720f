"""Spectral attention over an EMA filter bank, batched across consecutive samples.

For a feature vector F and momentum bank M (K x D) the module builds 2K+1
frequency components per feature::

    rows 0..K-1   2 * (F - M[K-1-j])      high-pass residuals, longest memory first
    row  K        F
    rows K+1..2K  2 * M[k]                low-pass components

and mixes them with a per-feature softmax over the ``sa_matrix`` logits.  With
a logit column symmetric about row K the mix collapses to F, which is how a
fresh module starts out as the identity.

Within a mini-batch the momentum entering sample b is row b of the unrolled
EMA trajectory; the trajectory's last row is carried into the next batch as
a constant.  Gradients reach earlier samples of the same batch through the
trajectory (and reach the smoothing factors through the unfolding matrix)
unless ``batched_bptt`` is switched off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bsa.ema import alpha_powers, build_unfolding_matrix, unfold
from bsa.errors import DimensionError, DomainError, StateError

DEFAULT_ALPHAS = (0.9, 0.99, 0.999)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def softmax(logits, axis=0):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def default_alphas(K: int) -> tuple[float, ...]:
    """Smoothing factors used when only K is given: 0.99 for K=1, else log-spaced 0.9..0.999."""
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    if K == 1:
        return (0.99,)
    if K == 3:
        return DEFAULT_ALPHAS
    return tuple(float(a) for a in 1.0 - 10.0 ** -np.linspace(1.0, 3.0, K))


def init_gaussian(K: int, D: int, sigma_idx: float | None = None) -> np.ndarray:
    """Logits whose softmax along axis 0 is a discretised Gaussian centred on row K."""
    if K < 1 or D < 1:
        raise DomainError(f"K and D must be positive, got K={K}, D={D}")
    if sigma_idx is None:
        sigma_idx = K / 2.0
    if sigma_idx <= 0:
        raise DomainError(f"sigma_idx must be positive, got {sigma_idx}")
    j = np.arange(2 * K + 1, dtype=np.float64)
    col = -((j - K) ** 2) / (2.0 * sigma_idx**2)
    return np.repeat(col[:, None], D, axis=1)


def set_smoothing(alphas) -> np.ndarray:
    """Raw (pre-sigmoid) parameters for the given smoothing factors."""
    a = np.atleast_1d(np.asarray(alphas, dtype=np.float64))
    if a.ndim != 1 or a.size == 0:
        raise DimensionError(f"alphas must be a non-empty 1-d sequence, got shape {a.shape}")
    if not np.all((a > 0) & (a < 1)):
        raise DomainError(f"smoothing factors must lie in (0, 1), got {a.tolist()}")
    if a.size > 1 and not np.all(np.diff(a) > 0):
        raise DomainError(f"smoothing factors must be strictly increasing, got {a.tolist()}")
    return logit(a)


def decompose(F, M) -> np.ndarray:
    """Stack the 2K+1 frequency components of F given momentum M.

    ``F`` has shape (..., D) and ``M`` shape (..., K, D) with matching
    leading axes (or M broadcastable against F); the result has the component
    axis first: (2K+1, ..., D).
    """
    F = np.asarray(F, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if M.ndim < 2 or M.shape[-1] != F.shape[-1]:
        raise DimensionError(f"momentum {M.shape} does not match feature {F.shape}")
    K = M.shape[-2]
    Mk = np.moveaxis(M, -2, 0)  # (K, ..., D)
    # extra look-back axes on F broadcast against a per-sample momentum
    while Mk.ndim < F.ndim + 1:
        Mk = Mk[..., None, :]
    high = 2.0 * (F[None] - Mk[::-1])
    low = 2.0 * np.broadcast_to(Mk, (K,) + np.broadcast_shapes(Mk.shape[1:], F.shape))
    mid = np.broadcast_to(F, low.shape[1:])[None]
    return np.concatenate([np.broadcast_to(high, low.shape), mid, low], axis=0)


def _unfolding_matrix_grad(alphas: np.ndarray, B: int) -> np.ndarray:
    """d A[k,p,q] / d alpha_k, same shape as the unfolding matrix."""
    pw = alpha_powers(alphas, B)
    dpw = np.zeros_like(pw)
    dpw[:, 1:] = np.arange(1, B + 1)[None, :] * pw[:, :-1]
    p = np.arange(B + 1)
    lag = p[:, None] - p[None, :]
    lower = lag >= 0
    idx = np.clip(lag, 0, B)
    one_m = (1.0 - alphas)[:, None, None]
    dA = np.where(lower[None], -pw[:, idx] + one_m * dpw[:, idx], 0.0)
    dA[:, :, 0] = np.where(lower[:, 0][None], dpw[:, idx[:, 0]], 0.0)
    return dA


@dataclass
class SAForwardTape:
    """Everything the backward pass needs from one training forward."""

    x: np.ndarray  # (B, P, D) inputs, P look-back positions (1 for plain vectors)
    squeeze: bool  # input was (B, D)
    alphas: np.ndarray  # (K,)
    A: np.ndarray  # (K, B+1, B+1) unfolding matrix
    Z: np.ndarray  # (K, B+1, D) carried momentum followed by the feature stream
    weights: np.ndarray  # (2K+1, D) softmax of sa_matrix
    components: np.ndarray  # (2K+1, B, P, D)
    token: object

    def replay(self) -> np.ndarray:
        out = _mix(self.components, self.weights)
        return out[:, 0, :] if self.squeeze else out


def _mix(components: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.sum(components * weights[:, None, None, :], axis=0)


class SpectralAttention:
    """Learnable frequency attention with a carried EMA momentum bank.

    Parameters
    ----------
    n_features : int
        D, the width of the feature vector (one column per data channel when
        the module sits on the model input).
    alphas : sequence of float
        Initial smoothing factors, strictly increasing in (0, 1).
    sigma_idx : float, optional
        Width of the Gaussian logit initialisation in slot units; K/2 if omitted.
    learn_smoothing : bool
        If False the smoothing factors receive zero gradient.
    batched_bptt : bool
        If False each sample sees its momentum as a constant, so no gradient
        links samples within a batch and the smoothing factors are untouched.
    """

    def __init__(
        self,
        n_features: int,
        alphas=DEFAULT_ALPHAS,
        sigma_idx: float | None = None,
        learn_smoothing: bool = True,
        batched_bptt: bool = True,
    ):
        self.raw_smoothing = set_smoothing(alphas)
        K = self.raw_smoothing.size
        self.sigma_idx = K / 2.0 if sigma_idx is None else float(sigma_idx)
        self.sa_matrix = init_gaussian(K, int(n_features), self.sigma_idx)
        self.momentum: np.ndarray | None = None
        self.learn_smoothing = bool(learn_smoothing)
        self.batched_bptt = bool(batched_bptt)
        self._live_token: object | None = None

    @property
    def K(self) -> int:
        return self.raw_smoothing.size

    @property
    def D(self) -> int:
        return self.sa_matrix.shape[1]

    @property
    def alphas(self) -> np.ndarray:
        return sigmoid(self.raw_smoothing)

    def weights(self) -> np.ndarray:
        return softmax(self.sa_matrix, axis=0)

    def params(self) -> dict[str, np.ndarray]:
        return {"sa_matrix": self.sa_matrix, "raw_smoothing": self.raw_smoothing}

    def set_smoothing(self, alphas) -> None:
        raw = set_smoothing(alphas)
        if raw.size != self.K:
            raise DimensionError(f"expected {self.K} smoothing factors, got {raw.size}")
        self.raw_smoothing[...] = raw

    def reset_identity(self) -> None:
        """Restore the symmetric Gaussian logits (identity mapping)."""
        self.sa_matrix[...] = init_gaussian(self.K, self.D, self.sigma_idx)

    def init_momentum(self, F0) -> None:
        F0 = np.asarray(F0, dtype=np.float64)
        if F0.shape != (self.D,):
            raise DimensionError(f"expected F0 of shape ({self.D},), got {F0.shape}")
        if not np.all(np.isfinite(F0)):
            raise DomainError("initial feature must be finite")
        self.momentum = np.repeat(F0[None, :], self.K, axis=0)

    def forward(self, x, training: bool = True):
        """Transform a batch of consecutive samples.

        ``x`` is either (B, D), one feature vector per timestep, or (B, L, D),
        a look-back window per timestep.  For windows the momentum stream is
        fed by the last position ``x[:, -1]`` and the mix is applied to every
        position with that sample's momentum.

        Returns ``(out, tape)``; ``tape`` is None unless ``training``.
        The carried momentum advances by B steps either way.
        """
        if self.momentum is None:
            raise StateError("momentum is uninitialised; call init_momentum first")
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[2] != self.D or x.shape[0] < 1:
            raise DimensionError(f"expected (B, D) or (B, L, D) with D={self.D}, got {x.shape}")
        B = x.shape[0]
        alphas = self.alphas
        stream = x[:, -1, :]
        A = build_unfolding_matrix(alphas, B)
        traj = unfold(A, self.momentum, stream)  # (B+1, K, D)
        W = self.weights()
        comps = decompose(x, traj[:B])
        out = _mix(comps, W)
        self.momentum = traj[B].copy()
        tape = None
        if training:
            token = object()
            self._live_token = token
            Z = np.concatenate([traj[0][:, None, :], np.broadcast_to(stream, (self.K,) + stream.shape)], axis=1)
            tape = SAForwardTape(x, squeeze, alphas, A, Z, W, comps, token)
        else:
            self._live_token = None
        return (out[:, 0, :] if squeeze else out), tape

    def backward(self, tape: SAForwardTape | None, grad_out) -> dict[str, np.ndarray]:
        """Gradients of ``sum(grad_out * out)`` for the forward that produced ``tape``.

        Returns a dict with ``sa_matrix``, ``raw_smoothing`` and ``x``.
        """
        if tape is None or tape.token is not self._live_token:
            raise StateError("no live tape: backward needs the tape of the latest training forward")
        self._live_token = None
        g = np.asarray(grad_out, dtype=np.float64)
        if tape.squeeze:
            g = g[:, None, :]
        if g.shape != tape.x.shape:
            raise DimensionError(f"grad_out shape {g.shape} does not match output {tape.x.shape}")
        K, B = self.K, tape.x.shape[0]
        W = tape.weights

        dW = np.sum(tape.components * g[None], axis=(1, 2))
        d_sa = W * (dW - np.sum(W * dW, axis=0, keepdims=True))

        # direct path: d comp_j / d x is 2 for high rows, 1 for the identity row
        gain = 2.0 * W[:K].sum(axis=0) + W[K]
        d_x = g * gain[None, None, :]

        d_raw = np.zeros(K)
        if self.batched_bptt:
            g_sum = g.sum(axis=1)  # (B, D)
            coef = 2.0 * (W[K + 1 :] - W[K - 1 :: -1])  # (K, D): low row minus mirrored high row
            d_traj = np.zeros((K, B + 1, self.D))
            d_traj[:, :B, :] = coef[:, None, :] * g_sum[None, :, :]
            # the carried-in momentum (column 0) is a constant: its gradient is dropped
            d_Z = np.matmul(tape.A.transpose(0, 2, 1), d_traj)
            d_x[:, -1, :] += d_Z[:, 1:, :].sum(axis=0)
            if self.learn_smoothing:
                d_A = np.matmul(d_traj, tape.Z.transpose(0, 2, 1))
                dA_dalpha = _unfolding_matrix_grad(tape.alphas, B)
                d_alpha = np.sum(d_A * dA_dalpha, axis=(1, 2))
                d_raw = d_alpha * tape.alphas * (1.0 - tape.alphas)

        if tape.squeeze:
            d_x = d_x[:, 0, :]
        return {"sa_matrix": d_sa, "raw_smoothing": d_raw, "x": d_x}

    def state_dict(self) -> dict:
        return {
            "K": self.K,
            "D": self.D,
            "sigma_idx": self.sigma_idx,
            "sa_matrix": self.sa_matrix.tolist(),
            "raw_smoothing": self.raw_smoothing.tolist(),
            "momentum": None if self.momentum is None else self.momentum.tolist(),
            "learn_smoothing": self.learn_smoothing,
            "batched_bptt": self.batched_bptt,
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "SpectralAttention":
        obj = cls.__new__(cls)
        obj.raw_smoothing = np.asarray(state["raw_smoothing"], dtype=np.float64)
        obj.sa_matrix = np.asarray(state["sa_matrix"], dtype=np.float64)
        K, D = int(state["K"]), int(state["D"])
        if obj.raw_smoothing.shape != (K,) or obj.sa_matrix.shape != (2 * K + 1, D):
            raise DimensionError("state dict shapes disagree with K and D")
        obj.sigma_idx = float(state.get("sigma_idx", K / 2.0))
        mom = state.get("momentum")
        obj.momentum = None if mom is None else np.asarray(mom, dtype=np.float64).reshape(K, D)
        obj.learn_smoothing = bool(state.get("learn_smoothing", True))
        obj.batched_bptt = bool(state.get("batched_bptt", True))
        obj._live_token = None
        return obj
