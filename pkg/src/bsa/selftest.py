"""Quick invariant battery used by ``bsa selftest``.

Each check returns ``(passed, detail)``.  ``inject_bug=True`` flips the sign
of one analytic gradient entry before checking, which must make the
gradient check fail and name the corrupted coordinate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from bsa.attention import SpectralAttention, default_alphas
from bsa.ema import build_unfolding_matrix, batched_momentum, sequential_momentum
from bsa.gradcheck import pipeline_gradcheck, random_pipeline


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def check_gradients(inject_bug: bool = False, n: int = 6):
    def flip(grads):
        grads["w_trend"][0, 0, 0] *= -1.0

    worst = None
    for seed in range(n):
        kind = "dlinear" if seed % 2 == 0 or inject_bug else "rlinear"
        rep = pipeline_gradcheck(*random_pipeline(kind, seed=seed), corrupt=flip if inject_bug else None)
        if worst is None or rep.max_rel_error > worst.max_rel_error:
            worst = rep
        if not rep.passed:
            break
    return worst.passed, str(worst)


def check_batched_equivalence(n: int = 50):
    rng = np.random.default_rng(1)
    dev = 0.0
    for _ in range(n):
        K, D, B = rng.integers(1, 6), rng.integers(1, 9), rng.integers(1, 65)
        alphas = np.sort(rng.uniform(0.05, 0.999, size=K)) + np.arange(K) * 1e-6
        M, F = rng.normal(size=(K, D)), rng.normal(size=(B, D))
        dev = max(dev, float(np.max(np.abs(batched_momentum(M, F, alphas) - sequential_momentum(M, F, alphas)))))
    return dev <= 1e-10, f"max deviation {dev:.2e} over {n} instances (tol 1e-10)"


def check_identity(n: int = 20):
    rng = np.random.default_rng(2)
    dev = 0.0
    for _ in range(n):
        K, D, B, L = rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 17), rng.integers(1, 9)
        bsa = SpectralAttention(D, alphas=default_alphas(K))
        bsa.init_momentum(rng.normal(size=D))
        x = rng.normal(size=(B, L, D)) * 10.0
        out, _ = bsa.forward(x, training=False)
        dev = max(dev, float(np.max(np.abs(out - x))))
    return dev <= 1e-12, f"max |out - in| {dev:.2e} over {n} instances (tol 1e-12)"


def check_causality(n: int = 5):
    rng = np.random.default_rng(3)
    leaks = 0
    for seed in range(n):
        model, x, _, M0 = random_pipeline("dlinear", B=6, seed=100 + seed)
        model.bsa.momentum = M0.copy()
        base, _ = model.forward(x)
        for j in range(1, x.shape[0]):
            xp = x.copy()
            xp[j] += rng.normal(size=xp[j].shape)
            model.bsa.momentum = M0.copy()
            out, _ = model.forward(xp)
            leaks += int(np.any(out[:j] != base[:j]))
    return leaks == 0, f"{leaks} earlier outputs changed by perturbing later samples"


def check_unfolding_rows(n: int = 20):
    rng = np.random.default_rng(4)
    dev = 0.0
    for _ in range(n):
        K, B = rng.integers(1, 6), rng.integers(1, 65)
        alphas = np.sort(rng.uniform(0.01, 0.999, size=K))
        A = build_unfolding_matrix(alphas, B)
        dev = max(dev, float(np.max(np.abs(A.sum(axis=2) - 1.0))))
    return dev <= 1e-12, f"max |row sum - 1| {dev:.2e} (tol 1e-12)"


CHECKS = {
    "gradcheck": check_gradients,
    "batched-vs-sequential EMA": check_batched_equivalence,
    "identity at init": check_identity,
    "causality": check_causality,
    "unfolding row sums": check_unfolding_rows,
}


def run(inject_bug: bool = False) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        ok, detail = fn(inject_bug=inject_bug) if name == "gradcheck" else fn()
        results.append(CheckResult(name, ok, detail, time.perf_counter() - t0))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  time    detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:5.2f}s  {r.detail}")
    return "\n".join(lines)
