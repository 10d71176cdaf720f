"""Channel-independent linear forecasters with an optional spectral-attention input stage.

Both models map a look-back window (B, L, N) to a forecast (B, S, N) with a
separate L x S linear map per channel.  Attached spectral attention acts on
the window position-wise with one column per channel:

* DLinear: on the raw window, before the trend/seasonal split.
* RLinear: on the instance-normalised window, before the linear layer.

Gradients are written out by hand; ``backward`` returns gradients for every
model parameter, the attached module's parameters (``bsa.`` prefix) and the
input window (``x``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bsa.attention import SpectralAttention
from bsa.errors import DimensionError, DomainError, StateError

REVIN_EPS = 1e-5


def moving_average_matrix(L: int, window: int) -> np.ndarray:
    """(L, L) operator of a centred moving average with edge replication."""
    if window < 1 or window % 2 == 0:
        raise DomainError(f"decomposition window must be odd and >= 1, got {window}")
    half = (window - 1) // 2
    mat = np.zeros((L, L))
    rows = np.arange(L)
    for off in range(-half, half + 1):
        np.add.at(mat, (rows, np.clip(rows + off, 0, L - 1)), 1.0 / window)
    return mat


def series_decompose(x, window: int = 25):
    """Split a series into (seasonal, trend); trend is the replicate-padded moving average."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise DimensionError(f"expected a non-empty 1-d series, got shape {x.shape}")
    half = (window - 1) // 2
    if window < 1 or window % 2 == 0:
        raise DomainError(f"decomposition window must be odd and >= 1, got {window}")
    padded = np.concatenate([np.full(half, x[0]), x, np.full(half, x[-1])])
    trend = np.convolve(padded, np.full(window, 1.0 / window), mode="valid")
    return x - trend, trend


def revin_normalize(x, eps: float = REVIN_EPS):
    """Per-channel instance normalisation over the window axis.

    ``x`` is (L, N) or (B, L, N).  Returns ``(x_norm, (mean, std))`` where
    ``x_norm = (x - mean) / (std + eps)`` and std is the population std.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2] < 2:
        raise DomainError("instance normalisation needs a window of at least 2 steps")
    mean = x.mean(axis=-2, keepdims=True)
    std = np.sqrt(np.mean((x - mean) ** 2, axis=-2, keepdims=True))
    return (x - mean) / (std + eps), (mean, std)


def revin_denormalize(stats, y, eps: float = REVIN_EPS) -> np.ndarray:
    mean, std = stats
    return np.asarray(y, dtype=np.float64) * (std + eps) + mean


def _apply(x, w):
    """Per-channel window map: (B, L, N) x (N, L, S) -> (B, S, N)."""
    return np.matmul(np.ascontiguousarray(x.transpose(2, 0, 1)), w).transpose(1, 2, 0)


def _weight_grad(x, g):
    """(B, L, N), (B, S, N) -> (N, L, S)."""
    return np.matmul(np.ascontiguousarray(x.transpose(2, 1, 0)), np.ascontiguousarray(g.transpose(2, 0, 1)))


def _input_grad(w, g):
    """(N, L, S), (B, S, N) -> (B, L, N)."""
    gt = np.ascontiguousarray(g.transpose(2, 0, 1))
    return np.matmul(gt, np.ascontiguousarray(w.transpose(0, 2, 1))).transpose(1, 2, 0)


@dataclass
class _Tape:
    x: np.ndarray
    squeeze: bool
    token: object
    cache: dict = field(default_factory=dict)
    bsa_tape: object = None


class LinearForecaster:
    """Shared plumbing for the two linear models."""

    kind = "base"

    def __init__(self, lookback: int, horizon: int, n_channels: int, rng=None):
        if lookback < 1 or horizon < 1 or n_channels < 1:
            raise DomainError("lookback, horizon and n_channels must be positive")
        self.lookback = int(lookback)
        self.horizon = int(horizon)
        self.n_channels = int(n_channels)
        self.bsa: SpectralAttention | None = None
        self._live_token = None
        self._rng = np.random.default_rng(rng)

    def _uniform(self, shape):
        bound = 1.0 / np.sqrt(self.lookback)
        return self._rng.uniform(-bound, bound, size=shape)

    def attach(self, bsa: SpectralAttention | None) -> None:
        if bsa is not None and bsa.D != self.n_channels:
            raise DimensionError(f"attention width {bsa.D} != channel count {self.n_channels}")
        self.bsa = bsa

    def params(self) -> dict[str, np.ndarray]:
        """Base-model parameters (mutated in place by optimisers)."""
        raise NotImplementedError

    def all_params(self) -> dict[str, np.ndarray]:
        out = dict(self.params())
        if self.bsa is not None:
            out.update({f"bsa.{k}": v for k, v in self.bsa.params().items()})
        return out

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (self.lookback, self.n_channels):
            raise DimensionError(
                f"expected window ({self.lookback}, {self.n_channels}) or a batch of them, got {x.shape}"
            )
        return x, squeeze

    def _attend(self, x, training):
        if self.bsa is None:
            return x, None
        return self.bsa.forward(x, training=training)

    def _new_tape(self, x, squeeze, training):
        if not training:
            self._live_token = None
            return None
        token = object()
        self._live_token = token
        return _Tape(x=x, squeeze=squeeze, token=token)

    def _claim(self, tape):
        if tape is None or tape.token is not self._live_token:
            raise StateError("no live tape: backward needs the tape of the latest training forward")
        self._live_token = None

    def _attend_backward(self, tape, d_attended, grads):
        if self.bsa is None:
            return d_attended
        g = self.bsa.backward(tape.bsa_tape, d_attended)
        grads["bsa.sa_matrix"] = g["sa_matrix"]
        grads["bsa.raw_smoothing"] = g["raw_smoothing"]
        return g["x"]

    def stream_feature(self, window) -> np.ndarray:
        """The per-channel value that feeds the momentum for this window."""
        window = np.asarray(window, dtype=np.float64)
        return window[-1].copy()

    def state_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lookback": self.lookback,
            "horizon": self.horizon,
            "n_channels": self.n_channels,
            "params": {k: v.tolist() for k, v in self.params().items()},
        }

    def load_params(self, params: dict) -> None:
        for name, arr in self.params().items():
            new = np.asarray(params[name], dtype=np.float64)
            if new.shape != arr.shape:
                raise DimensionError(f"parameter {name}: expected {arr.shape}, got {new.shape}")
            arr[...] = new


class DLinear(LinearForecaster):
    """Seasonal + trend linear forecaster, one pair of linear maps per channel."""

    kind = "dlinear"

    def __init__(self, lookback, horizon, n_channels, window: int = 25, rng=None):
        super().__init__(lookback, horizon, n_channels, rng)
        self.window = int(window)
        self._avg = moving_average_matrix(self.lookback, self.window)
        shape = (self.n_channels, self.lookback, self.horizon)
        self.w_seasonal = self._uniform(shape)
        self.w_trend = self._uniform(shape)
        self.bias = np.zeros((self.n_channels, self.horizon))

    def params(self):
        return {"w_seasonal": self.w_seasonal, "w_trend": self.w_trend, "bias": self.bias}

    def forward(self, x, training: bool = False):
        x, squeeze = self._check_input(x)
        tape = self._new_tape(x, squeeze, training)
        xa, bsa_tape = self._attend(x, training)
        trend = np.matmul(self._avg, xa)
        seasonal = xa - trend
        out = _apply(seasonal, self.w_seasonal) + _apply(trend, self.w_trend) + self.bias.T[None]
        if tape is not None:
            tape.bsa_tape = bsa_tape
            tape.cache.update(seasonal=seasonal, trend=trend)
        return (out[0] if squeeze else out), tape

    def backward(self, tape, grad_out) -> dict[str, np.ndarray]:
        self._claim(tape)
        g = np.asarray(grad_out, dtype=np.float64)
        if tape.squeeze:
            g = g[None]
        seasonal, trend = tape.cache["seasonal"], tape.cache["trend"]
        grads = {
            "w_seasonal": _weight_grad(seasonal, g),
            "w_trend": _weight_grad(trend, g),
            "bias": g.sum(axis=0).T,
        }
        d_seas = _input_grad(self.w_seasonal, g)
        d_trend = _input_grad(self.w_trend, g)
        d_xa = d_seas + np.matmul(self._avg.T, d_trend - d_seas)
        d_x = self._attend_backward(tape, d_xa, grads)
        grads["x"] = d_x[0] if tape.squeeze else d_x
        return grads

    def state_dict(self):
        state = super().state_dict()
        state["window"] = self.window
        return state


class RLinear(LinearForecaster):
    """Instance-normalised single linear map per channel."""

    kind = "rlinear"

    def __init__(self, lookback, horizon, n_channels, rng=None):
        super().__init__(lookback, horizon, n_channels, rng)
        if self.lookback < 2:
            raise DomainError("RLinear needs lookback >= 2")
        self.weight = self._uniform((self.n_channels, self.lookback, self.horizon))
        self.bias = np.zeros((self.n_channels, self.horizon))

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def stream_feature(self, window) -> np.ndarray:
        xn, _ = revin_normalize(window)
        return xn[-1].copy()

    def forward(self, x, training: bool = False):
        x, squeeze = self._check_input(x)
        tape = self._new_tape(x, squeeze, training)
        xn, (mean, std) = revin_normalize(x)
        xa, bsa_tape = self._attend(xn, training)
        y = _apply(xa, self.weight) + self.bias.T[None]
        out = revin_denormalize((mean, std), y)
        if tape is not None:
            tape.bsa_tape = bsa_tape
            tape.cache.update(xa=xa, y=y, mean=mean, std=std)
        return (out[0] if squeeze else out), tape

    def backward(self, tape, grad_out) -> dict[str, np.ndarray]:
        self._claim(tape)
        g = np.asarray(grad_out, dtype=np.float64)
        if tape.squeeze:
            g = g[None]
        c = tape.cache
        x, mean, std = tape.x, c["mean"], c["std"]
        scale = std + REVIN_EPS  # (B, 1, N)
        gy = g * scale
        grads = {"weight": _weight_grad(c["xa"], gy), "bias": gy.sum(axis=0).T}
        d_xa = _input_grad(self.weight, gy)
        d_xn = self._attend_backward(tape, d_xa, grads)

        L = self.lookback
        centred = x - mean
        d_scale = np.sum(g * c["y"], axis=1, keepdims=True) - np.sum(d_xn * centred, axis=1, keepdims=True) / scale**2
        d_mean = np.sum(g, axis=1, keepdims=True) - np.sum(d_xn, axis=1, keepdims=True) / scale
        safe_std = np.where(std > 0, std, 1.0)
        d_x = d_xn / scale + d_mean / L + np.where(std > 0, d_scale * centred / (L * safe_std), 0.0)
        grads["x"] = d_x[0] if tape.squeeze else d_x
        return grads


MODELS = {"dlinear": DLinear, "rlinear": RLinear}


def build_model(kind: str, lookback: int, horizon: int, n_channels: int, rng=None, **kw) -> LinearForecaster:
    try:
        cls = MODELS[kind]
    except KeyError:
        raise DomainError(f"unknown model kind {kind!r}; expected one of {sorted(MODELS)}") from None
    return cls(lookback, horizon, n_channels, rng=rng, **kw)


def model_from_state(state: dict) -> LinearForecaster:
    kw = {"window": state["window"]} if state["kind"] == "dlinear" else {}
    model = build_model(state["kind"], state["lookback"], state["horizon"], state["n_channels"], **kw)
    model.load_params(state["params"])
    return model
