"""One-joint arm: synthesize a gain, check it on the zero level set, roll it out.

Run with ``python demos/running_example.py``.
"""

import numpy as np

from sisynth import ConeConfig, IndexTemplate, SolverConfig, assemble_problem, build_arm, build_index, solve
from sisynth.verify import rollout_batch, verify_index

arm = build_arm(1)
template = IndexTemplate(arm)

# one program per control sign pattern; the shared variable is the gain k
problem = assemble_problem(arm, template, ConeConfig(max_product_order=2), ideal_degree=2)
print(f"{len(problem.programs)} sign patterns, basis sizes {[p.basis_size for p in problem.programs]}")

res = solve(problem, SolverConfig(seed=0))
print(f"status {res.status}: k = {res.theta[0]:.6g}, margin {res.margin:.3g}, "
      f"residual {res.residual:.2g}, {res.wall_time_seconds:.2f}s")

# brute-force check: worst min_u phi_dot over sampled states with phi = 0
rep = verify_index(arm, template, res.theta, n_samples=100_000)
print(f"oracle: valid={rep.valid} over {rep.samples} samples, worst margin {rep.worst_margin:.4g}")

# a gain that is too small fails the same oracle
weak = verify_index(arm, template, [0.3], n_samples=20_000)
print(f"k = 0.3: valid={weak.valid}, worst margin {weak.worst_margin:.4g}")

idx = build_index(template, res.theta)
stats = rollout_batch(arm, idx, n_rollouts=50, steps=2000, dt=0.01, seed=0)
print(f"50 adversarial rollouts: {sum(s.violations for s in stats)} violations, "
      f"min distance to wall {min(s.min_distance for s in stats):.3g}, "
      f"SSA active on {int(np.mean([s.active_steps for s in stats]))} steps per rollout")
