"""Command-line driver: ``python -m bsa <command> ...``.

Commands
--------
pretrain DATA --out DIR          train a base forecaster
finetune CKPT DATA --out DIR     attach attention to a base checkpoint and fine-tune
eval CKPT DATA [--out DIR]       test-split MSE/MAE, overall and per horizon step
synth DATA --period P --out CSV  add a sine of period P to every channel
analyze CKPT DATA --out DIR      attention heatmap, densities and data spectra
selftest [--inject-bug]          invariant battery

Settings come from ``--config`` (a JSON object with TrainConfig keys) and are
overridden by flags.  Every command that writes files also writes
``manifest.json`` describing the run.  ``BSA_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from bsa import __version__, checkpoint
from bsa.analysis import analyze, export_report
from bsa.attention import default_alphas
from bsa.data import load_csv, prepare, synthesize_sine, write_csv
from bsa.errors import CheckpointError, DimensionError, DomainError, ParseError, StateError
from bsa.training import TrainConfig, build_and_pretrain, evaluate, finetune


class UsageError(Exception):
    pass


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    bad = sorted(set(raw) - set(TrainConfig.keys()))
    if bad:
        raise UsageError(f"unknown config key(s) {', '.join(bad)}; valid keys: {', '.join(TrainConfig.keys())}")
    return raw


def resolve_config(args, base: TrainConfig) -> TrainConfig:
    """File values over ``base``, then flags over both."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config(args.config))
    flag_map = {
        "seed": "seed",
        "lookback": "lookback",
        "horizon": "horizon",
        "batch": "batch_size",
        "epochs": "epochs",
        "model": "model",
        "alphas": "alphas",
    }
    for flag, key in flag_map.items():
        val = getattr(args, flag, None)
        if val is not None:
            values[key] = val
    if getattr(args, "k", None) is not None:
        if getattr(args, "alphas", None) is not None and len(args.alphas) != args.k:
            raise UsageError(f"--k {args.k} disagrees with {len(args.alphas)} values in --alphas")
        values.setdefault("alphas", default_alphas(args.k))
    if getattr(args, "no_bptt", False):
        values["batched_bptt"] = False
    if getattr(args, "freeze_alpha", False):
        values["lr_smoothing"] = 0.0
    try:
        return replace(base, **values)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc


def _write_history(path: Path, history) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "weighted_val_loss"])
        for rec in history:
            w.writerow([rec["epoch"], repr(rec["train_loss"]), repr(rec["weighted_val_loss"])])


def _write_alpha_log(path: Path, log) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        K = len(log[0]) if log else 0
        w.writerow(["epoch", *(f"alpha_{k}" for k in range(K))])
        for epoch, row in enumerate(log):
            w.writerow([epoch, *(repr(a) for a in row)])


class Run:
    """Collects inputs and outputs of one command and writes the manifest."""

    def __init__(self, command: str, argv, out_dir: Path | None, manifest_name: str = "manifest.json"):
        self.command = command
        self.manifest_name = manifest_name
        self.argv = list(argv)
        self.out_dir = out_dir
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.config: dict = {}
        self.seed = None
        self.extra: dict = {}
        self.t0 = time.perf_counter()
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)

    def add_input(self, path) -> Path:
        path = Path(path)
        self.inputs[str(path)] = sha256(path)
        return path

    def output(self, name: str) -> Path:
        path = self.out_dir / name
        self.outputs.append(str(path))
        return path

    def finish(self) -> dict:
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "version": __version__,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "duration_s": time.perf_counter() - self.t0,
            **self.extra,
        }
        if self.out_dir is not None:
            path = self.out_dir / self.manifest_name
            manifest["outputs"] = self.outputs + [str(path)]
            path.write_text(json.dumps(manifest, indent=2))
        missing = [p for p in manifest["outputs"] if not Path(p).exists()]
        if missing:
            raise RuntimeError(f"declared outputs missing: {missing}")
        return manifest


def _prepared(data_path, cfg: TrainConfig):
    ds = load_csv(data_path)
    if cfg.lookback + cfg.horizon > ds.T:
        raise DomainError(f"look-back {cfg.lookback} + horizon {cfg.horizon} exceeds series length {ds.T}")
    return prepare(ds, cfg.lookback, cfg.horizon, ratios=cfg.split)


def cmd_pretrain(args, run: Run) -> int:
    cfg = resolve_config(args, TrainConfig.pretrain_defaults())
    run.config, run.seed = cfg.to_dict(), cfg.seed
    data = _prepared(run.add_input(args.data), cfg)
    model, fit_run = build_and_pretrain(data, cfg)
    checkpoint.save(run.output("checkpoint.json"), model, cfg.to_dict())
    _write_history(run.output("metrics.csv"), fit_run.history)
    run.extra = {"best_epoch": fit_run.best_epoch, "best_weighted_val_loss": fit_run.best_val}
    print(f"pretrained {cfg.model}: best weighted val {fit_run.best_val:.6f} at epoch {fit_run.best_epoch}")
    return 0


def cmd_finetune(args, run: Run) -> int:
    base, saved = checkpoint.load(run.add_input(args.checkpoint))
    if base.bsa is not None:
        raise CheckpointError("checkpoint already carries an attention module; fine-tune a base checkpoint")
    start = TrainConfig(
        model=base.kind,
        lookback=base.lookback,
        horizon=base.horizon,
        split=tuple(saved.get("split", TrainConfig.split)),
        decomp_window=saved.get("decomp_window", TrainConfig.decomp_window),
        seed=saved.get("seed", 0),
    )
    cfg = resolve_config(args, start)
    checkpoint.check_compatible(base, base.n_channels, cfg.lookback, cfg.horizon)
    run.config, run.seed = cfg.to_dict(), cfg.seed
    data = _prepared(run.add_input(args.data), cfg)
    checkpoint.check_compatible(base, data.dataset.N)
    model, fit_run = finetune(base, data, cfg)
    checkpoint.save(run.output("checkpoint.json"), model, cfg.to_dict())
    _write_history(run.output("metrics.csv"), fit_run.history)
    _write_alpha_log(run.output("alphas.csv"), fit_run.alpha_log)
    run.extra = {"best_epoch": fit_run.best_epoch, "best_weighted_val_loss": fit_run.best_val}
    print(f"fine-tuned: best weighted val {fit_run.best_val:.6f} at epoch {fit_run.best_epoch}")
    return 0


def cmd_eval(args, run: Run) -> int:
    model, saved = checkpoint.load(run.add_input(args.checkpoint))
    cfg = TrainConfig(lookback=model.lookback, horizon=model.horizon, split=tuple(saved.get("split", TrainConfig.split)))
    run.config, run.seed = cfg.to_dict(), saved.get("seed")
    data = _prepared(run.add_input(args.data), cfg)
    checkpoint.check_compatible(model, data.dataset.N)
    result = evaluate(model, data, args.split)
    result["split"] = args.split
    text = json.dumps(result, indent=2)
    if run.out_dir is not None:
        run.output("metrics.json").write_text(text)
    print(text)
    return 0


def cmd_synth(args, run: Run) -> int:
    if args.period is None:
        raise UsageError("synth needs --period")
    ds = load_csv(run.add_input(args.data))
    seed = 0 if args.seed is None else args.seed
    run.seed = seed
    run.config = {"period": args.period}
    out = synthesize_sine(ds, args.period, seed=seed)
    write_csv(out, run.output(Path(args.out).name))
    print(f"wrote {run.outputs[-1]}")
    return 0


def cmd_analyze(args, run: Run) -> int:
    model, saved = checkpoint.load(run.add_input(args.checkpoint))
    if model.bsa is None:
        raise CheckpointError("checkpoint has no attention module to analyse")
    ds = load_csv(run.add_input(args.data))
    checkpoint.check_compatible(model, ds.N)
    run.config, run.seed = saved, saved.get("seed")
    manifest = export_report(analyze(model.bsa, ds), run.out_dir, manifest_name="report.json")
    run.outputs.extend(str(run.out_dir / f) for f in manifest["files"])
    moment = manifest["kde_first_moment"]["mean"]
    print(f"analysis written to {run.out_dir}; mean KDE first moment {moment:+.4f}")
    return 0


def cmd_selftest(args, run: Run) -> int:
    from bsa import selftest

    results = selftest.run(inject_bug=args.inject_bug)
    print(selftest.format_table(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bsa", description="Batched spectral attention for linear forecasters")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def train_flags(sp):
        sp.add_argument("--config", help="JSON file with TrainConfig keys")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--lookback", type=int)
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--batch", type=int)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("pretrain", help="train a base forecaster")
    sp.add_argument("data")
    sp.add_argument("--model", choices=["dlinear", "rlinear"])
    train_flags(sp)

    sp = sub.add_parser("finetune", help="fine-tune a base checkpoint with attention")
    sp.add_argument("checkpoint")
    sp.add_argument("data")
    train_flags(sp)
    sp.add_argument("--k", type=int, help="number of smoothing factors (default spacing)")
    sp.add_argument("--alphas", type=_float_list, help="comma-separated smoothing factors")
    sp.add_argument("--no-bptt", action="store_true", help="no gradient between samples of a batch")
    sp.add_argument("--freeze-alpha", action="store_true", help="keep smoothing factors fixed")

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("data")
    sp.add_argument("--split", choices=["train", "val", "test"], default="test")
    sp.add_argument("--out")

    sp = sub.add_parser("synth", help="add a sine wave to every channel")
    sp.add_argument("data")
    sp.add_argument("--period", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("analyze", help="export attention and spectrum analysis")
    sp.add_argument("checkpoint")
    sp.add_argument("data")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("selftest", help="run the invariant battery")
    sp.add_argument("--inject-bug", action="store_true", help="corrupt one gradient (negative control)")
    return p


COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "analyze": cmd_analyze,
    "selftest": cmd_selftest,
}


def _thread_limit():
    raw = os.environ.get("BSA_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"BSA_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"BSA_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    out = getattr(args, "out", None)
    try:
        limiter = _thread_limit()
        if args.command == "synth":
            target = Path(out)
            run = Run(args.command, argv, target.parent, manifest_name=f"{target.stem}.manifest.json")
        else:
            run = Run(args.command, argv, Path(out) if out else None)
        try:
            code = COMMANDS[args.command](args, run)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
        if code == 0 and args.command != "selftest":
            run.finish()
        return code
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    except (DomainError, DimensionError, ParseError, CheckpointError, StateError, FloatingPointError, OSError) as exc:
        print(f"bsa {args.command}: error: {exc}", file=sys.stderr)
        return 1
