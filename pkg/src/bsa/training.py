"""Sequential training: pretraining a base model and fine-tuning it with spectral attention.

One epoch walks the training samples in time order in consecutive batches
(forward, MSE, backward, Adam), then pushes the boundary gap through the
attention momentum without scoring it, then scores the validation samples
with a weight that rises towards the end of the validation period.  The
model with the lowest weighted validation loss is kept.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from bsa.attention import DEFAULT_ALPHAS, SpectralAttention
from bsa.data import PreparedData, sequential_batches
from bsa.errors import DomainError
from bsa.forecasters import LinearForecaster

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState | None, lr: float, name: str = "param") -> AdamState:
    """In-place bias-corrected Adam update of ``param``; returns the updated state."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape:
        raise ValueError(f"{name}: gradient shape {grad.shape} != parameter shape {param.shape}")
    bad = ~np.isfinite(grad)
    if bad.any():
        first = np.unravel_index(int(np.argmax(bad)), grad.shape)
        raise FloatingPointError(f"{name}: {int(bad.sum())} non-finite gradient entries, first at index {first}")
    if state is None:
        state = AdamState(np.zeros_like(param), np.zeros_like(param))
    state.t += 1
    state.m *= BETA1
    state.m += (1.0 - BETA1) * grad
    state.v *= BETA2
    state.v += (1.0 - BETA2) * grad * grad
    m_hat = state.m / (1.0 - BETA1**state.t)
    v_hat = state.v / (1.0 - BETA2**state.t)
    param -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return state


class Adam:
    """Adam over named parameters with one learning rate per group."""

    def __init__(self, params: dict[str, np.ndarray], group_of=None):
        self.params = params
        self.group_of = group_of or (lambda name: "model")
        self.state: dict[str, AdamState] = {}

    def step(self, grads: dict[str, np.ndarray], lrs: dict[str, float]) -> None:
        for name, p in self.params.items():
            lr = lrs[self.group_of(name)]
            self.state[name] = adam_step(p, grads[name], self.state.get(name), lr, name)


def param_group(name: str) -> str:
    if name == "bsa.sa_matrix":
        return "sa_matrix"
    if name == "bsa.raw_smoothing":
        return "smoothing"
    return "model"


def warmup_timesteps(alphas) -> int:
    """Length of the linear warm-up in data timesteps: ceil(1 / (1 - max alpha))."""
    a_max = float(np.max(alphas))
    # 1/(1-0.999) evaluates to 1000.0000000000009; round off representation noise first
    return max(1, math.ceil(round(1.0 / (1.0 - a_max), 6)))


def warmup_schedule(alphas, base_lr: float, step: int, batch_size: int = 1) -> float:
    """Learning rate at batch ``step`` (0-based, reset each epoch).

    The warm-up spans ``warmup_timesteps(alphas)`` timesteps, i.e. that many
    divided by ``batch_size`` (rounded up) optimisation steps.
    """
    if step < 0:
        raise DomainError(f"step must be >= 0, got {step}")
    w = math.ceil(warmup_timesteps(alphas) / batch_size)
    return base_lr * min(1.0, (step + 1) / w)


def validation_weight(val_idx, val_len):
    val_idx = np.asarray(val_idx, dtype=np.float64)
    if val_len <= 0:
        return np.ones_like(val_idx)
    return 0.5 + 0.5 * np.sin(0.5 * np.pi * val_idx / val_len)


def weighted_validation(losses, val_len: int | None = None) -> float:
    """Weighted mean of per-sample losses; weights rise from 0.5 (first) to 1.0 (index ``val_len``)."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise DomainError("no validation losses")
    if val_len is None:
        val_len = losses.size - 1
    w = validation_weight(np.arange(losses.size), val_len)
    return float(np.sum(w * losses) / np.sum(w))


@dataclass
class TrainConfig:
    """Training hyperparameters. Defaults are the fine-tuning setup."""

    model: str = "dlinear"
    lookback: int = 96
    horizon: int = 96
    epochs: int = 20
    batch_size: int = 256
    lr_model: float = 3e-4
    lr_sa_matrix: float = 0.03
    lr_smoothing: float = 3e-3
    alphas: tuple = DEFAULT_ALPHAS
    batched_bptt: bool = True
    warmup: bool = True
    shuffle_pretrain: bool = False
    split: tuple = (0.7, 0.1, 0.2)
    decomp_window: int = 25
    seed: int = 0

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        self.split = tuple(float(r) for r in self.split)
        if self.epochs < 1:
            raise DomainError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise DomainError(f"batch size must be positive, got {self.batch_size}")
        for name in ("lr_model", "lr_sa_matrix", "lr_smoothing"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")

    @classmethod
    def pretrain_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(epochs=30, batch_size=64, lr_model=1e-3)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphas"] = list(self.alphas)
        d["split"] = list(self.split)
        return d

    def lrs(self) -> dict[str, float]:
        return {"model": self.lr_model, "sa_matrix": self.lr_sa_matrix, "smoothing": self.lr_smoothing}


@dataclass
class TrainRun:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    best_params: dict[str, np.ndarray] | None = None
    optimizer: Adam | None = None
    alpha_log: list[list[float]] = field(default_factory=list)

    @property
    def train_losses(self) -> list[float]:
        return [h["train_loss"] for h in self.history]

    @property
    def val_losses(self) -> list[float]:
        return [h["weighted_val_loss"] for h in self.history]


def _mse_grad(pred, target):
    diff = pred - target
    per_sample = np.mean(diff * diff, axis=(1, 2))
    return per_sample, 2.0 * diff / diff.size


def _check_finite(loss, where):
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite loss during {where}")


def _restart_stream(model: LinearForecaster, data: PreparedData) -> None:
    if model.bsa is not None:
        x0, _ = data.batch(range(data.plan.train.start, data.plan.train.start + 1))
        model.bsa.init_momentum(model.stream_feature(x0[0]))


def _advance(model, data, idx: range, batch_size: int, collect: bool = False):
    """Forward without gradients; returns predictions if ``collect``."""
    preds = []
    if model.bsa is None and not collect:
        return None
    for block in sequential_batches(idx, batch_size):
        x, _ = data.batch(block)
        p, _ = model.forward(x, training=False)
        if collect:
            preds.append(p)
    if collect:
        return np.concatenate(preds) if preds else np.empty((0, model.horizon, model.n_channels))
    return None


def train_epoch(model: LinearForecaster, data: PreparedData, config: TrainConfig, run: TrainRun, rng=None, on_loss=None) -> dict:
    """One pass of sequential training followed by the validation pass.

    ``on_loss(segment, indices)`` is called for every block of samples whose
    loss is accumulated (used to audit that gap samples never are).
    """
    plan = data.plan
    params = model.all_params()
    if run.optimizer is None:
        run.optimizer = Adam(params, param_group)
    opt = run.optimizer
    opt.params = params
    base_lrs = config.lrs()
    if model.bsa is not None:
        if not model.bsa.learn_smoothing:
            base_lrs["smoothing"] = 0.0
        epoch_alphas = model.bsa.alphas.copy()

    _restart_stream(model, data)
    if model.bsa is None and config.shuffle_pretrain:
        order = np.random.default_rng(rng).permutation(np.asarray(plan.train))
        blocks = [order[i : i + config.batch_size] for i in range(0, order.size, config.batch_size)]
    else:
        blocks = sequential_batches(plan.train, config.batch_size)

    total, count = 0.0, 0
    for step, block in enumerate(blocks):
        x, y = data.batch(block)
        pred, tape = model.forward(x, training=True)
        per_sample, g = _mse_grad(pred, y)
        loss = float(per_sample.mean())
        _check_finite(loss, "training")
        if on_loss is not None:
            on_loss("train", block)
        grads = model.backward(tape, g)
        lrs = dict(base_lrs)
        if model.bsa is not None and config.warmup:
            lrs = {k: warmup_schedule(epoch_alphas, v, step, config.batch_size) for k, v in lrs.items()}
        opt.step(grads, lrs)
        total += float(per_sample.sum())
        count += per_sample.size

    _advance(model, data, plan.gap1, config.batch_size)
    val_pred = _advance(model, data, plan.val, config.batch_size, collect=True)
    _, val_y = data.batch(plan.val)
    val_losses = np.mean((val_pred - val_y) ** 2, axis=(1, 2))
    if on_loss is not None:
        on_loss("val", plan.val)
    wval = weighted_validation(val_losses)
    _check_finite(wval, "validation")
    rec = {"train_loss": total / count, "weighted_val_loss": wval, "val_loss": float(val_losses.mean())}
    if model.bsa is not None:
        rec["alphas"] = model.bsa.alphas.tolist()
    return rec


def snapshot(model: LinearForecaster) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.all_params().items()}


def restore(model: LinearForecaster, params: dict[str, np.ndarray]) -> None:
    for k, v in model.all_params().items():
        v[...] = params[k]


def fit(model: LinearForecaster, data: PreparedData, config: TrainConfig, on_epoch=None, on_loss=None) -> TrainRun:
    """Train for ``config.epochs`` epochs and leave the best-validated parameters in ``model``."""
    run = TrainRun()
    rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        rec = train_epoch(model, data, config, run, rng=rng, on_loss=on_loss)
        rec["epoch"] = epoch
        run.history.append(rec)
        if model.bsa is not None:
            run.alpha_log.append(model.bsa.alphas.tolist())
        if rec["weighted_val_loss"] < run.best_val:
            run.best_val = rec["weighted_val_loss"]
            run.best_epoch = epoch
            run.best_params = snapshot(model)
        if on_epoch is not None:
            on_epoch(rec)
    restore(model, run.best_params)
    return run


def predict_segment(model: LinearForecaster, data: PreparedData, segment: str = "test", batch_size: int = 256) -> np.ndarray:
    """Predictions for one segment, with the momentum streamed from the start of training."""
    plan = data.plan
    names = [name for name, _, _ in plan.segments()]
    if segment not in names:
        raise DomainError(f"unknown segment {segment!r}")
    _restart_stream(model, data)
    for name, idx, _ in plan.segments():
        if name == segment:
            return _advance(model, data, idx, batch_size, collect=True)
        _advance(model, data, idx, batch_size)
    raise AssertionError("unreachable")


def metrics(pred: np.ndarray, target: np.ndarray) -> dict:
    err = pred - target
    return {
        "mse": float(np.mean(err**2)),
        "mae": float(np.mean(np.abs(err))),
        "mse_per_step": np.mean(err**2, axis=(0, 2)).tolist(),
        "mae_per_step": np.mean(np.abs(err), axis=(0, 2)).tolist(),
        "mse_per_channel": np.mean(err**2, axis=(0, 1)).tolist(),
        "mae_per_channel": np.mean(np.abs(err), axis=(0, 1)).tolist(),
        "horizon": int(pred.shape[1]),
        "n_samples": int(pred.shape[0]),
    }


def evaluate(model: LinearForecaster, data: PreparedData, split: str = "test", batch_size: int = 256) -> dict:
    """MSE/MAE on the standardized scale for ``split``, averaged and per horizon step."""
    pred = predict_segment(model, data, split, batch_size)
    _, target = data.batch(getattr(data.plan, split))
    return metrics(pred, target)


def attach_bsa(model: LinearForecaster, config: TrainConfig) -> SpectralAttention:
    bsa = SpectralAttention(
        model.n_channels,
        alphas=config.alphas,
        learn_smoothing=config.lr_smoothing > 0,
        batched_bptt=config.batched_bptt,
    )
    model.attach(bsa)
    return bsa


def build_and_pretrain(data: PreparedData, config: TrainConfig, **kw):
    from bsa.forecasters import build_model

    extra = {"window": config.decomp_window} if config.model == "dlinear" else {}
    model = build_model(config.model, config.lookback, config.horizon, data.dataset.N, rng=config.seed, **extra)
    run = fit(model, data, config, **kw)
    return model, run


def finetune(base: LinearForecaster, data: PreparedData, config: TrainConfig, **kw):
    """Copy ``base``, attach an identity-initialised attention module and train."""
    model = copy.deepcopy(base)
    model.bsa = None
    attach_bsa(model, config)
    run = fit(model, data, config, **kw)
    return model, run
