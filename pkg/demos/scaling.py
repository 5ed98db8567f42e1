"""
Cost grows linearly in W and H
==============================

Time forward plus backward while doubling the window, the horizon and the
latent width. A slope near 1 on the log-log fit means linear cost.
"""
from qssm import bench

rows = bench.run_bench(repeats=3)
for r in rows:
    print(f"{r['sweep']}  W={r['W']:4d}  H={r['H']:4d}  d={r['d']:4d}  {r['part']:>8}  {r['seconds'] * 1e3:8.2f} ms")

for key, s in bench.summarize(rows).items():
    print(f"{key:>11}: slope {s['exponent']:.2f}, x{2 ** s['exponent']:.2f} per doubling")
