"""Reading a trained attention module: slot positions, attention densities and data spectra.

Slots are placed on a log-memory axis.  Smoothing factor ``a`` sits at
``log10(1 / (1 - a))`` (1 for a=0.9, 3 for a=0.999); low-pass slots are on
the positive side, their high-pass mirrors on the negative side, and the
identity slot at 0.  A Gaussian kernel density over those positions,
weighted by the softmaxed attention, shows which frequency band a channel
leans on.  Mass drifting right means the channel prefers long-memory
(low-frequency) components.

The data side is an amplitude spectrum per channel on a ``-log10(frequency)``
axis, Gaussian-smoothed over bins and optionally detrended by a straight
line fit in log-frequency.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from bsa.attention import SpectralAttention
from bsa.errors import DimensionError, DomainError

KDE_BANDWIDTH = 0.4
FFT_SMOOTH_SIGMA = 5.0
DIRECT_DFT_MAX = 4096
MIN_FFT_LENGTH = 16


def modified_alpha(raw) -> np.ndarray:
    """``log10(1 / (1 - sigmoid(raw)))`` computed stably as ``log10(1 + e^raw)``."""
    raw = np.asarray(raw, dtype=np.float64)
    return np.logaddexp(0.0, raw) / np.log(10.0)


def slot_positions(raw) -> np.ndarray:
    """x-positions of the 2K+1 slots: mirrored high-pass rows, identity, low-pass rows."""
    a = np.atleast_1d(modified_alpha(raw))
    return np.concatenate([-a[::-1], [0.0], a])


def default_grid(positions, bandwidth: float = KDE_BANDWIDTH, n: int = 401) -> np.ndarray:
    """Symmetric grid covering every kernel out to five bandwidths."""
    reach = float(np.max(np.abs(positions))) + 5.0 * bandwidth
    return np.linspace(-reach, reach, n)


def _check_weights(weights, n_slots):
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    if w.ndim != 2 or w.shape[0] != n_slots:
        raise DimensionError(f"expected weights with {n_slots} rows, got shape {np.shape(weights)}")
    if np.any(w < 0) or not np.allclose(w.sum(axis=0), 1.0, atol=1e-9):
        raise DomainError("attention weights must be non-negative and sum to 1 per channel")
    return w


def attention_kde(weights, positions, bandwidth: float = KDE_BANDWIDTH, grid=None):
    """Weighted Gaussian mixture over slot positions.

    ``weights`` is (2K+1,) or (2K+1, D), softmax-normalised along the slot
    axis.  Returns ``(grid, density)`` with density of shape (n, D + 1): one
    column per channel followed by the curve of the channel-averaged weights.
    """
    positions = np.asarray(positions, dtype=np.float64)
    w = _check_weights(weights, positions.size)
    if bandwidth <= 0:
        raise DomainError(f"bandwidth must be positive, got {bandwidth}")
    grid = default_grid(positions, bandwidth) if grid is None else np.asarray(grid, dtype=np.float64)
    z = (grid[:, None] - positions[None, :]) / bandwidth
    kernels = np.exp(-0.5 * z * z) / (bandwidth * np.sqrt(2.0 * np.pi))  # (n, 2K+1)
    w_all = np.concatenate([w, w.mean(axis=1, keepdims=True)], axis=1)
    return grid, kernels @ w_all


def kde_first_moment(weights, positions) -> np.ndarray:
    """Mean of x under each density column (kernels are symmetric, so just the weighted slot mean)."""
    positions = np.asarray(positions, dtype=np.float64)
    w = _check_weights(weights, positions.size)
    w_all = np.concatenate([w, w.mean(axis=1, keepdims=True)], axis=1)
    return positions @ w_all


def module_kde(bsa: SpectralAttention, bandwidth: float = KDE_BANDWIDTH, grid=None):
    return attention_kde(bsa.weights(), slot_positions(bsa.raw_smoothing), bandwidth, grid)


def module_first_moment(bsa: SpectralAttention) -> np.ndarray:
    return kde_first_moment(bsa.weights(), slot_positions(bsa.raw_smoothing))


def dft_amplitude(signal, direct: bool | None = None) -> np.ndarray:
    """|DFT| at bins 1..T//2.

    Short signals use an explicit DFT sum (exact phase reduction modulo T,
    processed in row chunks); longer ones use ``numpy.fft``.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"expected a 1-d signal, got shape {x.shape}")
    T = x.size
    if direct is None:
        direct = T <= DIRECT_DFT_MAX
    if not direct:
        return np.abs(np.fft.rfft(x)[1 : T // 2 + 1])
    k = np.arange(1, T // 2 + 1)
    n = np.arange(T)
    out = np.empty(k.size)
    step = max(1, (1 << 22) // T)
    for lo in range(0, k.size, step):
        kk = k[lo : lo + step]
        ang = (2.0 * np.pi / T) * ((kk[:, None] * n[None, :]) % T)
        re = np.cos(ang) @ x
        im = np.sin(ang) @ x
        out[lo : lo + step] = np.hypot(re, im)
    return out


@dataclass
class FFTCurve:
    grid: np.ndarray  # -log10(frequency), increasing
    frequency: np.ndarray  # cycles per step, matching grid
    amplitude: np.ndarray
    smoothed: np.ndarray
    detrended: np.ndarray


def fft_curve(signal, sigma: float = FFT_SMOOTH_SIGMA) -> FFTCurve:
    """Amplitude spectrum of the mean-removed signal on a -log10(frequency) axis.

    Smoothing is a Gaussian filter over frequency bins; detrending subtracts
    the least-squares line of smoothed amplitude against log10(frequency) and
    clips at zero.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < MIN_FFT_LENGTH:
        raise DomainError(f"need a 1-d signal of at least {MIN_FFT_LENGTH} samples, got shape {x.shape}")
    T = x.size
    amp = dft_amplitude(x - x.mean())
    freq = np.arange(1, T // 2 + 1) / T
    smooth = gaussian_filter1d(amp, sigma) if sigma > 0 else amp.copy()
    logf = np.log10(freq)
    slope, icept = np.polyfit(logf, smooth, 1)
    detr = np.clip(smooth - (slope * logf + icept), 0.0, None)
    # bins run from high to low -log10(f); flip so the grid increases
    return FFTCurve(-logf[::-1], freq[::-1], amp[::-1], smooth[::-1], detr[::-1])


def peak_frequency(curve: FFTCurve, which: str = "smoothed") -> float:
    values = getattr(curve, which)
    return float(curve.frequency[int(np.argmax(values))])


@dataclass
class AnalysisReport:
    channels: list[str]
    alphas: np.ndarray
    positions: np.ndarray
    heatmap: np.ndarray  # (2K+1, D) attention weights
    kde_grid: np.ndarray
    kde: np.ndarray  # (n, D+1)
    first_moment: np.ndarray  # (D+1,)
    fft: dict[str, FFTCurve] = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.alphas.size


def analyze(bsa: SpectralAttention, dataset=None, channels=None, bandwidth: float = KDE_BANDWIDTH) -> AnalysisReport:
    """Collect heatmap, densities and (if a dataset is given) per-channel spectra."""
    if channels is None:
        channels = list(dataset.channels) if dataset is not None else [f"ch{i}" for i in range(bsa.D)]
    if len(channels) != bsa.D:
        raise DimensionError(f"{len(channels)} channel names for a module of width {bsa.D}")
    positions = slot_positions(bsa.raw_smoothing)
    W = bsa.weights()
    grid, dens = attention_kde(W, positions, bandwidth)
    ffts = {}
    if dataset is not None:
        if dataset.N != bsa.D:
            raise DimensionError(f"dataset has {dataset.N} channels, module has {bsa.D}")
        ffts = {name: fft_curve(dataset.values[:, i]) for i, name in enumerate(channels)}
    return AnalysisReport(list(channels), bsa.alphas, positions, W, grid, dens, kde_first_moment(W, positions), ffts)


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if not isinstance(v, str) else v for v in row])


def _slot_labels(K: int) -> list[str]:
    return [f"high{K - 1 - j}" for j in range(K)] + ["identity"] + [f"low{k}" for k in range(K)]


def export_report(report: AnalysisReport, out_dir, manifest_name: str = "manifest.json") -> dict:
    """Write CSV files and a manifest; returns the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []

    heat = out / "heatmap.csv"
    labels = _slot_labels(report.K)
    _write_rows(
        heat,
        ["slot", "position", *report.channels],
        ([labels[j], report.positions[j], *report.heatmap[j]] for j in range(len(labels))),
    )
    files.append(heat.name)

    kde = out / "kde.csv"
    _write_rows(kde, ["x", *report.channels, "mean"], ([x, *row] for x, row in zip(report.kde_grid, report.kde)))
    files.append(kde.name)

    for i, (name, curve) in enumerate(report.fft.items()):
        path = out / f"fft_{i}.csv"
        _write_rows(
            path,
            ["neg_log10_freq", "frequency", "amplitude", "smoothed", "detrended"],
            zip(curve.grid, curve.frequency, curve.amplitude, curve.smoothed, curve.detrended),
        )
        files.append(path.name)

    manifest = {
        "channels": report.channels,
        "K": report.K,
        "alphas": report.alphas.tolist(),
        "positions": report.positions.tolist(),
        "kde_bandwidth": KDE_BANDWIDTH,
        "kde_first_moment": dict(zip([*report.channels, "mean"], report.first_moment.tolist())),
        "fft_smoothing_sigma_bins": FFT_SMOOTH_SIGMA,
        "fft_files": {f"fft_{i}.csv": name for i, name in enumerate(report.fft)},
        "detrend": "approximation: automated least-squares line in log10(frequency), clipped at 0",
        "files": files + [manifest_name],
    }
    (out / manifest_name).write_text(json.dumps(manifest, indent=2))
    return manifest
