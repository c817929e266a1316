#!/usr/bin/env python3
"""Finite-difference check of the loss gradients on random instances.

Prints the worst relative error over the requested number of instances.
Instances are rejection-sampled so every anchor has clearly separated
extreme scores (the min-max subgradient is only kinked there) and at
least one anchor ranks a negative highest (otherwise small temperatures
saturate every softmax and there is no gradient left to measure).
"""

import argparse
import sys
import time

import numpy as np

from multipos.losses import LossConfig, multi_positive_loss


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def score_rows(A, P, H):
    n, k, _ = P.shape
    rows = []
    for i in range(n):
        s = [float(A[i] @ P[i, j]) for j in range(k)]
        s += [float(A[i] @ A[j]) for j in range(n) if j != i]
        if H is not None:
            s.append(float(A[i] @ H[i]))
        rows.append(np.asarray(s))
    return rows


def sample_instance(rng, n, k, d, with_hard, margin=0.005, tries=5000):
    for _ in range(tries):
        A = unit_rows(rng, n, d)
        P = unit_rows(rng, n * k, d).reshape(n, k, d)
        H = unit_rows(rng, n, d) if with_hard else None
        rows = score_rows(A, P, H)
        sorted_rows = [np.sort(r) for r in rows]
        if any(s[1] - s[0] < margin or s[-1] - s[-2] < margin for s in sorted_rows):
            continue
        if any(int(np.argmax(r)) >= k for r in rows):
            return A, P, H
    raise RuntimeError(f"no usable instance for n={n} k={k} d={d}")


def central_diff(f, arrays, h):
    out = []
    for a in arrays:
        g = np.zeros_like(a, dtype=np.float64)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=100)
    ap.add_argument("--seed", type=int, default=20260814)
    ap.add_argument("--h", type=float, default=1e-4)
    ap.add_argument("--tolerance", type=float, default=1e-4)
    args = ap.parse_args()

    t0 = time.perf_counter()
    worst = 0.0
    worst_desc = ""
    for trial in range(args.instances):
        rng = np.random.default_rng([args.seed, trial])
        n = int(rng.integers(2, 9))
        k = int(rng.integers(1, 6))
        d = int(rng.integers(4, 17))
        norm = "min_max" if trial % 2 == 0 else "identity"
        tau = (0.05, 0.2, 1.0)[trial % 3]
        with_hard = trial % 5 == 0
        A, P, H = sample_instance(rng, n, k, d, with_hard)
        cfg = LossConfig(tau=tau, normalization=norm, use_hard_negatives=with_hard)
        out = multi_positive_loss(A, P, H, cfg)
        arrays = [A, P] + ([H] if with_hard else [])
        fd = central_diff(lambda: multi_positive_loss(A, P, H, cfg).value, arrays, args.h)
        analytic = [out.grad_anchor, out.grad_positives]
        if with_hard:
            analytic.append(out.grad_hard_negatives)
        a = np.concatenate([x.reshape(-1) for x in analytic])
        b = np.concatenate([x.reshape(-1) for x in fd])
        rel = float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12))
        if rel > worst:
            worst = rel
            worst_desc = f"n={n} k={k} d={d} {norm} tau={tau} hard={with_hard}"
    elapsed = time.perf_counter() - t0
    status = "OK" if worst < args.tolerance else "FAIL"
    print(f"{status}: worst rel {worst:.3e} over {args.instances} instances "
          f"({worst_desc}) in {elapsed:.1f}s")
    return 0 if worst < args.tolerance else 1


if __name__ == "__main__":
    sys.exit(main())
