"""Datasets, chronological splits, sequential batching and synthetic sine injection.

Sample ``t`` (an absolute row index) pairs the look-back window
``values[t-L:t]`` with the target ``values[t:t+S]``.  The usable samples of a
series of length T are therefore ``t = L .. T-S``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from bsa.errors import DimensionError, DomainError, ParseError

STD_EPS = 1e-8


@dataclass
class TimeSeriesDataset:
    """A T x N real matrix plus the metadata needed to split and rescale it."""

    values: np.ndarray
    channels: list[str]
    timestamps: list[str] | None = None
    time_header: str = "date"
    interval: str = ""
    boundaries: tuple[int, int, int] | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"values must be T x N, got shape {self.values.shape}")
        if len(self.channels) != self.values.shape[1]:
            raise DimensionError(f"{len(self.channels)} channel names for {self.values.shape[1]} columns")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("dataset contains non-finite values")
        if self.boundaries is not None:
            t_tr, t_val, t_end = self.boundaries
            if not 0 < t_tr < t_val < t_end <= self.T:
                raise DomainError(f"invalid split boundaries {self.boundaries} for T={self.T}")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class WindowSpec:
    lookback: int
    horizon: int
    batch_size: int = 1

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1 or self.batch_size < 1:
            raise DomainError(f"look-back, horizon and batch size must be >= 1: {self}")

    def check(self, T: int) -> None:
        if self.lookback + self.horizon > T:
            raise DomainError(f"series of length {T} is too short for L={self.lookback}, S={self.horizon}")


def load_csv(path) -> TimeSeriesDataset:
    """Read ``timestamp, ch1, ch2, ...`` with a header row. Missing or non-numeric cells are errors."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if len(header) < 2:
            raise ParseError(f"{path}: need a timestamp column and at least one channel")
        stamps, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}")
            vals = []
            for col, cell in enumerate(row[1:], start=2):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}: row {lineno}, column {col}: not a number: {cell!r}") from None
                if not math.isfinite(vals[-1]):
                    raise ParseError(f"{path}: row {lineno}, column {col}: missing or non-finite value {cell!r}")
            stamps.append(row[0])
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: header only, no data rows")
    return TimeSeriesDataset(np.array(rows), list(header[1:]), stamps, time_header=header[0])


def write_csv(ds: TimeSeriesDataset, path) -> None:
    stamps = ds.timestamps if ds.timestamps is not None else [str(i) for i in range(ds.T)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([ds.time_header, *ds.channels])
        for stamp, row in zip(stamps, ds.values):
            w.writerow([stamp, *(repr(float(v)) for v in row)])


def split_boundaries(T: int, ratios=(0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    """Row counts -> (T_tr, T_val, T_end) with whole rows, train and test rounded down."""
    r_tr, r_val, r_te = ratios
    if min(ratios) <= 0 or abs(r_tr + r_val + r_te - 1.0) > 1e-9:
        raise DomainError(f"split ratios must be positive and sum to 1, got {ratios}")
    n_tr = int(T * r_tr)
    n_te = int(T * r_te)
    return n_tr, T - n_te, T


@dataclass(frozen=True)
class SplitPlan:
    """Sample-index ranges (absolute ``t``) of a consecutive split.

    ``gap1``/``gap2`` are the windows that straddle a boundary: they keep the
    momentum stream unbroken but never count towards a loss or a metric.
    """

    lookback: int
    horizon: int
    boundaries: tuple[int, int, int]
    train: range
    gap1: range
    val: range
    gap2: range
    test: range

    @property
    def stream(self) -> range:
        return range(self.train.start, self.test.stop)

    def segments(self):
        """(name, range, scored) in time order."""
        return [
            ("train", self.train, True),
            ("gap1", self.gap1, False),
            ("val", self.val, True),
            ("gap2", self.gap2, False),
            ("test", self.test, True),
        ]


def consecutive_split(T: int, lookback: int, horizon: int, boundaries=None, ratios=(0.7, 0.1, 0.2)) -> SplitPlan:
    if boundaries is None:
        boundaries = split_boundaries(T, ratios)
    t_tr, t_val, t_end = (int(b) for b in boundaries)
    L, S = int(lookback), int(horizon)
    WindowSpec(L, S).check(T)
    if not 0 < t_tr < t_val < t_end <= T:
        raise DomainError(f"invalid split boundaries {boundaries} for T={T}")
    if t_tr - S < L or t_val - S < t_tr or t_end - S < t_val:
        raise DomainError(f"split {boundaries} leaves an empty segment for L={L}, S={S}")
    return SplitPlan(
        lookback=L,
        horizon=S,
        boundaries=(t_tr, t_val, t_end),
        train=range(L, t_tr - S + 1),
        gap1=range(t_tr - S + 1, t_tr),
        val=range(t_tr, t_val - S + 1),
        gap2=range(t_val - S + 1, t_val),
        test=range(t_val, t_end - S + 1),
    )


def sequential_batches(indices: range, batch_size: int) -> list[range]:
    """Consecutive, in-order blocks of at most ``batch_size`` indices."""
    if batch_size < 1:
        raise DomainError(f"batch size must be >= 1, got {batch_size}")
    return [indices[i : i + batch_size] for i in range(0, len(indices), batch_size)]


def make_windows(values: np.ndarray, lookback: int, horizon: int):
    """All (input, target) pairs as views; entry ``t - lookback`` belongs to sample ``t``."""
    values = np.asarray(values, dtype=np.float64)
    WindowSpec(lookback, horizon).check(values.shape[0])
    win = sliding_window_view(values, lookback + horizon, axis=0)  # (n, N, L+S)
    win = win.transpose(0, 2, 1)
    return win[:, :lookback], win[:, lookback:]


def synthesize_sine(ds: TimeSeriesDataset, period: float, seed=None) -> TimeSeriesDataset:
    """Add a sine of the given period to every channel.

    Amplitude is the channel's standard deviation; phases are drawn
    independently per channel from U[0, 2*pi).
    """
    if not np.isfinite(period) or period < 2:
        raise DomainError(f"period must be finite and >= 2, got {period}")
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=ds.N)
    amp = ds.values.std(axis=0)
    t = np.arange(ds.T, dtype=np.float64)[:, None]
    values = ds.values + amp[None, :] * np.sin(2.0 * np.pi * t / period + phase[None, :])
    return replace(ds, values=values, mean=None, std=None)


def standardize(ds: TimeSeriesDataset, boundaries=None):
    """Z-score every channel with statistics of the training rows ``[0, T_tr)``.

    Returns ``(standardized dataset, (mean, std))``.
    """
    boundaries = boundaries or ds.boundaries or split_boundaries(ds.T)
    train = ds.values[: boundaries[0]]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std < STD_EPS, 1.0, std)
    out = replace(ds, values=(ds.values - mean) / std, boundaries=tuple(boundaries), mean=mean, std=std)
    return out, (mean, std)


def destandardize(values, stats) -> np.ndarray:
    mean, std = stats
    return np.asarray(values) * std + mean


@dataclass
class PreparedData:
    """Standardized values cut into windows, with the split plan attached."""

    dataset: TimeSeriesDataset
    plan: SplitPlan
    inputs: np.ndarray = field(repr=False)
    targets: np.ndarray = field(repr=False)

    def batch(self, idx):
        """Inputs and targets for absolute sample indices (a range slices, an array gathers)."""
        if isinstance(idx, range) and idx.step == 1:
            lo, hi = idx.start - self.plan.lookback, idx.stop - self.plan.lookback
            return self.inputs[lo:hi], self.targets[lo:hi]
        pos = np.asarray(idx) - self.plan.lookback
        return self.inputs[pos], self.targets[pos]


def prepare(ds: TimeSeriesDataset, lookback: int, horizon: int, ratios=(0.7, 0.1, 0.2), boundaries=None) -> PreparedData:
    """Split, standardize with train statistics, and window a raw dataset."""
    WindowSpec(lookback, horizon).check(ds.T)
    boundaries = boundaries or ds.boundaries or split_boundaries(ds.T, ratios)
    plan = consecutive_split(ds.T, lookback, horizon, boundaries)
    std_ds, _ = standardize(ds, boundaries)
    X, Y = make_windows(std_ds.values, lookback, horizon)
    return PreparedData(std_ds, plan, X, Y)
