"""Unicycle avoiding a point obstacle, driven through the CLI pipeline.

Run with ``python demos/unicycle.py``.  The record notes whether the first gain
ends up above one.
"""

import json

from sisynth.cli import parse_config, run_synth

cfg = parse_config("""
model:
  kind: unicycle
simulate:
  enabled: true
  n_rollouts: 20
  steps: 1000
""")
rec, seconds = run_synth(cfg)
print(f"{rec.model}: {rec.status} in {seconds:.1f}s, theta {rec.theta}")
print(f"oracle valid {rec.oracle_valid} ({rec.oracle_samples} samples), k1 > 1: {rec.extra['k1_above_one']}")
print(json.dumps(rec.rollouts, indent=2))
