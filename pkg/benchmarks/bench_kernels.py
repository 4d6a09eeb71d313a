"""Numba kernels against their numpy fallbacks.

The backend is fixed at import time by ``DUDO_NUMBA``, so each backend runs
in its own child process. Every kernel is timed (best of ``--repeat`` runs,
after one warm-up call that also pays for JIT compilation) and its output is
saved so the parent can check that both backends agree.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--geometry toy]
"""
import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np


def best_of(fn, repeat):
    fn()  # warm-up (compilation for numba)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def child(out_path, repeat, geometry):
    from dudocf._accel import backend
    from dudocf.autodiff import kernels
    from dudocf.physics import ScannerGeometry, attenuation_factors
    from dudocf.physics.system_matrix import _trace_matrix

    rng = np.random.default_rng(0)
    geom = ScannerGeometry.preset(geometry)
    res, outs = {}, {}

    res["siddon trace"] = best_of(lambda: _trace_matrix(geom), repeat)
    A = _trace_matrix(geom)
    outs["siddon"] = A.csr.toarray().ravel()[::97]

    mu = rng.uniform(0.0, 0.2, geom.volume_grid)
    res["attenuation factors"] = best_of(lambda: attenuation_factors(A, mu), repeat)
    outs["atten"] = attenuation_factors(A, mu)

    x = rng.standard_normal((2, 8, 16, 16, 8))
    xp = kernels._pad(x, 1)
    shape = (8, 8, 4)
    res["im2col unfold (stride 2)"] = best_of(lambda: kernels.unfold(xp, 3, 2, shape), repeat)
    cols = kernels.unfold(xp, 3, 2, shape)
    outs["unfold"] = cols
    res["col2im fold (stride 2)"] = best_of(lambda: kernels.fold(cols, 3, 2, shape, xp.shape), repeat)
    outs["fold"] = kernels.fold(cols, 3, 2, shape, xp.shape)

    w = rng.standard_normal((8, 8, 3, 3, 3))
    res["conv3d forward (stride 1)"] = best_of(lambda: kernels.conv3d_forward(x, w, 1, 1), repeat)
    outs["conv"] = kernels.conv3d_forward(x, w, 1, 1)

    np.savez(out_path, **outs)
    print(json.dumps({"backend": backend(), "times": res}))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--geometry", default="toy")
    ap.add_argument("--child", default=None, help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        child(args.child, args.repeat, args.geometry)
        return

    results, arrays = {}, {}
    with tempfile.TemporaryDirectory() as tmp:
        for flag in ("1", "0"):
            path = os.path.join(tmp, f"out_{flag}.npz")
            env = dict(os.environ, DUDO_NUMBA=flag)
            cmd = [sys.executable, __file__, "--child", path, "--repeat", str(args.repeat), "--geometry", args.geometry]
            r = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
            rec = json.loads(r.stdout.strip().splitlines()[-1])
            results[rec["backend"]] = rec["times"]
            with np.load(path) as z:
                arrays[rec["backend"]] = {k: z[k] for k in z.files}

    print(f"{'kernel':30s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speed-up':>9s}")
    for name in results["numba"]:
        a, b = results["numba"][name] * 1e3, results["numpy"][name] * 1e3
        print(f"{name:30s} {a:12.3f} {b:12.3f} {b / a:8.1f}x")
    worst = max(
        float(np.max(np.abs(arrays["numba"][k] - arrays["numpy"][k]))) for k in arrays["numba"]
    )
    print(f"largest output difference between backends: {worst:.2e}")


if __name__ == "__main__":
    main()
