"""Side-by-side timing of the two kernel backends.

Runs the conv/pool microbenchmarks and one full training step under each
backend in a subprocess (the backend is fixed at import time, so it cannot be
switched within a process) and prints a comparison table.

Usage: python benchmarks/bench_kernels.py [--repeats 50] [--hw 64]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = """
import json, os, sys, time
import numpy as np
from featsim import kernels, Tensor, Adam, backward
from featsim import autodiff as ad
from featsim.unet import UNet, UNetConfig
from featsim.training import dice_loss, one_hot

repeats = int(sys.argv[1])
hw = int(sys.argv[2])

shapes = [(1, 8, hw, 3), (8, 8, hw, 3), (8, 16, hw // 2, 3), (16, 16, hw // 2, 3),
          (16, 32, hw // 4, 3), (32, 32, hw // 4, 3), (32, 64, hw // 8, 3),
          (64, 64, hw // 8, 3), (64, 32, hw // 4, 3), (32, 16, hw // 2, 3),
          (16, 8, hw, 3), (8, 4, hw, 1)]

rng = np.random.default_rng(0)
rows = []
for cin, cout, size, k in shapes:
    pad = 1 if k == 3 else 0
    x = rng.standard_normal((cin, size, size)).astype(np.float32)
    w = rng.standard_normal((cout, cin, k, k)).astype(np.float32)
    b = rng.standard_normal(cout).astype(np.float32)
    gy = rng.standard_normal((cout, size, size)).astype(np.float32)
    for _ in range(3):
        kernels.conv2d_forward(x, w, b, pad)
        kernels.conv2d_backward(gy, x, w, pad, True, True)
    t0 = time.perf_counter()
    for _ in range(repeats):
        kernels.conv2d_forward(x, w, b, pad)
    tf = (time.perf_counter() - t0) / repeats * 1e6
    t0 = time.perf_counter()
    for _ in range(repeats):
        kernels.conv2d_backward(gy, x, w, pad, True, True)
    tb = (time.perf_counter() - t0) / repeats * 1e6
    rows.append({"cin": cin, "cout": cout, "hw": size, "k": k, "fwd_us": tf, "bwd_us": tb})

net = UNet.build(UNetConfig(in_channels=1, num_classes=4, depth=3, base_channels=8),
                 seed=np.random.default_rng(0))
opt = Adam(net.parameters(), lr=3e-4)
img = rng.random((1, hw, hw), dtype=np.float32)
tgt = one_hot(rng.integers(0, 4, (hw, hw), dtype=np.uint8), 4, np.float32)

def step():
    probs, _ = net.forward(Tensor(img))
    loss = dice_loss(probs, ad.Tensor(tgt))
    backward(loss)
    opt.step()
    opt.zero_grad()

for _ in range(3):
    step()
n = max(10, repeats // 2)
t0 = time.perf_counter()
for _ in range(n):
    step()
step_ms = (time.perf_counter() - t0) / n * 1e3

print(json.dumps({"backend": kernels.BACKEND, "rows": rows, "step_ms": step_ms}))
"""


def run_backend(backend, repeats, hw):
    env = dict(os.environ, FEATSIM_KERNELS=backend, FEATSIM_THREADS="1")
    out = subprocess.run(
        [sys.executable, "-c", WORKER, str(repeats), str(hw)],
        env=env, capture_output=True, text=True,
    )
    if out.returncode != 0:
        sys.stderr.write(out.stderr)
        return None
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--hw", type=int, default=64, help="image side for the step benchmark")
    args = ap.parse_args(argv)

    results = {}
    for backend in ("numpy", "cython"):
        r = run_backend(backend, args.repeats, args.hw)
        if r is None:
            print(f"{backend}: unavailable (extension not built?)")
        else:
            results[backend] = r

    if "numpy" not in results:
        return 1
    np_rows = results["numpy"]["rows"]
    cy_rows = results["cython"]["rows"] if "cython" in results else None

    print(f"{'cin':>4} {'cout':>4} {'hw':>4} k | {'numpy fwd':>10} {'bwd':>8}", end="")
    if cy_rows:
        print(f" | {'cython fwd':>10} {'bwd':>8} | fwd x  bwd x")
    else:
        print()
    for i, nr in enumerate(np_rows):
        line = (f"{nr['cin']:>4} {nr['cout']:>4} {nr['hw']:>4} {nr['k']} | "
                f"{nr['fwd_us']:>8.0f}us {nr['bwd_us']:>6.0f}us")
        if cy_rows:
            cr = cy_rows[i]
            line += (f" | {cr['fwd_us']:>8.0f}us {cr['bwd_us']:>6.0f}us"
                     f" | {nr['fwd_us'] / cr['fwd_us']:5.2f} {nr['bwd_us'] / cr['bwd_us']:6.2f}")
        print(line)
    print()
    for backend, r in results.items():
        print(f"{backend:7s} training step ({args.hw}x{args.hw}, depth 3, base 8): "
              f"{r['step_ms']:.1f} ms")
    print("\nratios > 1 mean the compiled backend is faster for that shape")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
