"""Synthesis time against arm size (absolute joint angles, one shared gain).

Run with ``python demos/scaling.py``; the 6-joint arm takes about half a minute.
"""

from sisynth.cli import parse_config, run_bench

cfg = parse_config("model:\n  kind: arm\n  geometry: absolute\n")
records, seconds, rows = run_bench(cfg, [1, 2, 3, 4, 6], n_seeds=1)
for row in rows:
    print(f"dof {row['dof']}: mean {row['mean_time']:.2f}s, validness {row['validness_pct']:.0f}%")
