"""Cumulative ablation on the period-300 synthetic task.

Each row removes one more component: learnable smoothing factors, then
multiple factors (K=1), then batched backpropagation through the momentum.
One pretrained base model per seed is shared by all rows.

    python scripts/ablation.py --seeds 0 1 2 3 4
"""

import argparse
from dataclasses import replace

import numpy as np

from bsa.attention import default_alphas
from bsa.experiments import run_synthetic
from bsa.training import TrainConfig, evaluate, finetune

ROWS = [
    ("full", {}),
    ("fixed alpha", {"lr_smoothing": 0.0}),
    ("K=1", {"lr_smoothing": 0.0, "alphas": default_alphas(1)}),
    ("no BPTT", {"lr_smoothing": 0.0, "alphas": default_alphas(1), "batched_bptt": False}),
]


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--period", type=float, default=300.0)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = p.parse_args()

    table = {"base": []} | {name: [] for name, _ in ROWS}
    for seed in args.seeds:
        r = run_synthetic(args.period, seed)
        table["base"].append(r.base_mse)
        table["full"].append(r.bsa_mse)
        for name, over in ROWS[1:]:
            model, _ = finetune(r.base_model, r.data, replace(TrainConfig(seed=seed), **over))
            table[name].append(evaluate(model, r.data)["mse"])
        print(f"seed {seed}: " + "  ".join(f"{k} {v[-1]:.4f}" for k, v in table.items()))
    print(f"\n{'config':<12} median MSE")
    for name, vals in table.items():
        print(f"{name:<12} {np.median(vals):.4f}")


if __name__ == "__main__":
    main()
