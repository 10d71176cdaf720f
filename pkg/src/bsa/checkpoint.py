"""Versioned JSON checkpoints: base-model parameters, optional attention state, training config.

Layout::

    {"format": "bsa-checkpoint", "version": 1,
     "model": {kind, lookback, horizon, n_channels, [window], params},
     "bsa": {K, D, sigma_idx, sa_matrix, raw_smoothing, momentum, flags} | null,
     "config": {...}}

Floats are written with ``repr`` precision by the json module, so a save/load
round trip is exact.
"""

from __future__ import annotations

import json
from pathlib import Path

from bsa.attention import SpectralAttention
from bsa.errors import CheckpointError, DimensionError
from bsa.forecasters import LinearForecaster, model_from_state

FORMAT = "bsa-checkpoint"
VERSION = 1


def to_dict(model: LinearForecaster, config: dict | None = None) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "model": model.state_dict(),
        "bsa": None if model.bsa is None else model.bsa.state_dict(),
        "config": config or {},
    }


def from_dict(state: dict) -> tuple[LinearForecaster, dict]:
    if not isinstance(state, dict) or state.get("format") != FORMAT:
        raise CheckpointError("not a bsa checkpoint")
    if state.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {state.get('version')!r}; expected {VERSION}")
    try:
        model = model_from_state(state["model"])
        if state.get("bsa") is not None:
            model.attach(SpectralAttention.from_state_dict(state["bsa"]))
    except (KeyError, TypeError, ValueError, DimensionError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    return model, dict(state.get("config") or {})


def save(path, model: LinearForecaster, config: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_dict(model, config)))
    return path


def load(path) -> tuple[LinearForecaster, dict]:
    try:
        state = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(state)


def check_compatible(model: LinearForecaster, n_channels: int, lookback: int | None = None, horizon: int | None = None) -> None:
    """Raise if a loaded model cannot be used with data of this shape."""
    if model.n_channels != n_channels:
        raise CheckpointError(f"checkpoint has {model.n_channels} channels, data has {n_channels}")
    if lookback is not None and lookback != model.lookback:
        raise CheckpointError(f"checkpoint look-back {model.lookback} != requested {lookback}")
    if horizon is not None and horizon != model.horizon:
        raise CheckpointError(f"checkpoint horizon {model.horizon} != requested {horizon}")
