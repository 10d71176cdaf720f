"""Synthetic-signal experiments: AR(1) base series with an injected sine, base vs. fine-tuned."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from bsa.data import PreparedData, TimeSeriesDataset, prepare, synthesize_sine
from bsa.training import TrainConfig, build_and_pretrain, evaluate, finetune


def ar1_dataset(T: int = 6000, N: int = 3, phi: float = 0.9, noise: float = 0.5, seed=None) -> TimeSeriesDataset:
    """Independent AR(1) channels plus white observation noise.

    ``x[t] = phi * x[t-1] + e[t]`` with unit innovations, started from its
    stationary distribution; each observed channel is ``x + noise * w``.
    """
    rng = np.random.default_rng(seed)
    x = np.empty((T, N))
    x[0] = rng.normal(size=N) / np.sqrt(1.0 - phi**2)
    e = rng.normal(size=(T, N))
    for t in range(1, T):
        x[t] = phi * x[t - 1] + e[t]
    x += noise * rng.normal(size=(T, N))
    return TimeSeriesDataset(x, [f"ch{i}" for i in range(N)], [str(i) for i in range(T)], time_header="t")


@dataclass
class ExperimentResult:
    seed: int
    base_mse: float
    bsa_mse: float
    base_model: object
    bsa_model: object
    data: PreparedData

    @property
    def improvement(self) -> float:
        return (self.base_mse - self.bsa_mse) / self.base_mse


def synthetic_dataset(period: float | None, seed: int, T: int = 6000, N: int = 3, **ar_kw) -> TimeSeriesDataset:
    ds = ar1_dataset(T, N, seed=seed, **ar_kw)
    if period is not None:
        ds = synthesize_sine(ds, period, seed=seed + 10_000)
    return ds


def run_synthetic(
    period: float | None,
    seed: int,
    pretrain: TrainConfig | None = None,
    finetune_cfg: TrainConfig | None = None,
    base_model=None,
    dataset: TimeSeriesDataset | None = None,
) -> ExperimentResult:
    """Pretrain DLinear, fine-tune it with attention, and score both on the test split.

    ``base_model`` skips pretraining (ablations reuse one base per seed).
    """
    pretrain = pretrain or TrainConfig.pretrain_defaults(seed=seed)
    finetune_cfg = finetune_cfg or TrainConfig(seed=seed)
    ds = dataset if dataset is not None else synthetic_dataset(period, seed)
    data = prepare(ds, pretrain.lookback, pretrain.horizon, ratios=pretrain.split)
    if base_model is None:
        base_model, _ = build_and_pretrain(data, replace(pretrain, seed=seed))
    base_mse = evaluate(base_model, data)["mse"]
    model, _ = finetune(base_model, data, replace(finetune_cfg, seed=seed))
    bsa_mse = evaluate(model, data)["mse"]
    return ExperimentResult(seed, base_mse, bsa_mse, base_model, model, data)
