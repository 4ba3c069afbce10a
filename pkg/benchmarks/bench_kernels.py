"""Time the numba kernels against the pure-numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Each workload
is timed after one warm-up call (which also triggers JIT compilation) and the
two backends' outputs are checked for agreement before timing.
"""
import argparse
import time

import numpy as np

from uwbcal.kernels import _numba as nb
from uwbcal.kernels import _numpy as npk
from uwbcal.nn import MlpModel


def _params(mode="tdoa", seed=0):
    return MlpModel.initialize(mode, np.random.default_rng(seed)).params()


def ekf_cycles(k, n=5000):
    """``n`` predict/update cycles on a TDoA range, as in one 25 s run at 200 Hz."""
    rng = np.random.default_rng(1)
    anchors = rng.uniform(0, 5, size=(8, 3))
    x = np.array([2.0, 2.0, 1.0, 0.1, 0.0, 0.0])
    P = np.eye(6) * 0.01
    z = rng.normal(0, 0.03, n)
    for s in range(n):
        x, P = k.ekf_predict(x, P, 0.005, 0.5)
        pred, h = k.range_jacobian(np.ascontiguousarray(x[:3]), anchors[s % 8], anchors[(s + 1) % 8], True)
        x, P = k.ekf_update(x, P, h, z[s], 9e-4)
    return x


def forward_one(k, n=5000):
    p = _params()
    X = np.random.default_rng(2).normal(size=(n, 9))
    out = 0.0
    for row in X:
        out += k.mlp_forward_one(row, *p)
    return out


def forward_batch(k, n=100_000):
    X = np.random.default_rng(3).normal(size=(n, 9))
    return k.mlp_forward_batch(X, *_params())


def sgd_epoch(k, n=20_000):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(n, 9))
    y = np.sin(X[:, 0]) * 0.1
    params = [a.copy() for a in _params()]
    loss = k.sgd_epoch(X, y, rng.permutation(n), 64, 0.05, *params)
    return np.concatenate([np.ravel(a) for a in params] + [[loss]])


WORKLOADS = {
    "ekf predict+update x5000": ekf_cycles,
    "mlp forward (single) x5000": forward_one,
    "mlp forward (batch 1e5)": forward_batch,
    "sgd epoch (2e4 samples)": sgd_epoch,
}


def best_time(fn, kernels, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(kernels)
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3, help="timed repetitions per workload (default: 3)")
    args = ap.parse_args(argv)

    print(f"{'workload':<28s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for name, fn in WORKLOADS.items():
        ref, fast = fn(npk), fn(nb)  # warm-up; compiles the numba path
        np.testing.assert_allclose(np.ravel(fast), np.ravel(ref), rtol=1e-8, atol=1e-10)
        t_np = best_time(fn, npk, args.repeat)
        t_nb = best_time(fn, nb, args.repeat)
        print(f"{name:<28s} {1e3 * t_np:11.2f} {1e3 * t_nb:11.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
