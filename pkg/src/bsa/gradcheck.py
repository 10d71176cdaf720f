"""Central-difference gradient checking for the hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bsa.attention import SpectralAttention, default_alphas
from bsa.forecasters import build_model

# entries smaller than this fraction of the largest gradient are compared
# on an absolute rather than a relative scale (finite-difference noise floor)
REL_FLOOR = 1e-3


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst: tuple[str, tuple] | None
    per_param: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-5

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tol)

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        where = "" if self.worst is None else f" at {self.worst[0]}{list(self.worst[1])}"
        return f"gradcheck {status}: max relative error {self.max_rel_error:.3e}{where} (tol {self.tol:g})"


def numeric_gradient(loss_fn, arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    num = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + h
        fp = loss_fn()
        arr[i] = old - h
        fm = loss_fn()
        arr[i] = old
        num[i] = (fp - fm) / (2.0 * h)
    return num


def gradcheck(loss_fn, params: dict, analytic: dict, h: float = 1e-6, tol: float = 1e-5) -> GradcheckReport:
    """Compare ``analytic[name]`` with central differences for every array in ``params``.

    ``loss_fn`` takes no arguments and must read the arrays in ``params``
    (they are perturbed in place and restored).  The per-entry error is
    ``|a - n| / max(|a|, |n|, REL_FLOOR * scale)`` with ``scale`` the largest
    gradient magnitude seen, at least 1.
    """
    numeric = {name: numeric_gradient(loss_fn, arr, h) for name, arr in params.items()}
    scale = max([1.0] + [float(np.max(np.abs(np.asarray(analytic[n])), initial=0.0)) for n in params])
    floor = REL_FLOOR * scale
    worst, worst_err, per = None, 0.0, {}
    for name in params:
        a = np.asarray(analytic[name], dtype=np.float64)
        n = numeric[name]
        if a.shape != n.shape:
            raise ValueError(f"{name}: analytic gradient shape {a.shape} != parameter shape {n.shape}")
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        per[name] = float(err.max(initial=0.0))
        if err.size and per[name] > worst_err:
            worst_err = per[name]
            worst = (name, tuple(int(i) for i in np.unravel_index(int(np.argmax(err)), err.shape)))
    return GradcheckReport(worst_err, worst, per, tol)


def random_pipeline(kind="dlinear", B=3, L=8, S=4, N=2, K=3, seed=0, learn_smoothing=True, batched_bptt=True):
    """A small random attention + forecaster instance with non-trivial weights.

    Returns ``(model, x, y, momentum)``.
    """
    rng = np.random.default_rng(seed)
    kw = {"window": 3} if kind == "dlinear" else {}
    model = build_model(kind, L, S, N, rng=rng, **kw)
    for v in model.params().values():
        v[...] = rng.normal(scale=0.5, size=v.shape)
    bsa = SpectralAttention(N, alphas=default_alphas(K), learn_smoothing=learn_smoothing, batched_bptt=batched_bptt)
    # spread the factors so every power in the unfolding matrix matters at small B
    bsa.set_smoothing(np.sort(rng.uniform(0.3, 0.95, size=K)) + np.arange(K) * 1e-3)
    bsa.sa_matrix[...] = rng.normal(size=bsa.sa_matrix.shape)
    model.attach(bsa)
    x = rng.normal(size=(B, L, N))
    y = rng.normal(size=(B, S, N))
    M0 = rng.normal(size=(K, N))
    return model, x, y, M0


def pipeline_gradcheck(model, x, y, M0, h: float = 1e-6, tol: float = 1e-5, corrupt=None) -> GradcheckReport:
    """Gradcheck of MSE(model(x), y) over every parameter and the input window.

    ``corrupt(grads)`` may tamper with the analytic gradients (negative controls).
    """
    x = np.array(x, dtype=np.float64)

    def loss():
        model.bsa.momentum = M0.copy()
        out, _ = model.forward(x)
        return float(np.mean((out - y) ** 2))

    model.bsa.momentum = M0.copy()
    out, tape = model.forward(x, training=True)
    grads = model.backward(tape, 2.0 * (out - y) / out.size)
    if corrupt is not None:
        corrupt(grads)
    params = dict(model.all_params())
    if not model.bsa.learn_smoothing:
        params.pop("bsa.raw_smoothing")
    params["x"] = x
    return gradcheck(loss, params, grads, h, tol)
