"""
Burden, path load and the shrinking feasible region
===================================================

Roll a random cell over one sequence and watch the per-step burden
accumulate into the path load while the feasible radius contracts. Then run
the same cell with hard enforcement, which projects every state back into
the ball.
"""

import numpy as np

from burdenlab.dynamics import CellParams, ConstraintConfig, rollout

rng = np.random.default_rng(1)
params = CellParams.init(16, 8, 8, rng, scale=1.0)
cfg = ConstraintConfig(r0=1.5, r_min=0.3, kappa=0.3)
tokens = rng.integers(0, 8, size=12)

soft = rollout(params, cfg, tokens, enforcement="soft")
hard = rollout(params, cfg, tokens, enforcement="hard")

print(" t  burden   load   radius  |h| soft  |h| hard")
for t in range(len(tokens)):
    print(f"{t:2d}  {soft.burdens[t]:.3f}  {soft.loads[t]:6.3f}  {soft.radii[t]:.3f}"
          f"   {np.linalg.norm(soft.states[t + 1]):.3f}    {np.linalg.norm(hard.states[t + 1]):.3f}")

print("soft feasibility violations", int(soft.feasibility_violations.sum()))
print("hard feasibility violations", int(hard.feasibility_violations.sum()))

# A discounted load forgets old burden; the uniform one never does.
disc = ConstraintConfig(r0=1.5, r_min=0.3, kappa=0.3, path_mode="discounted", lambda_path=0.7)
print("final load uniform   ", soft.loads[-1].round(3))
print("final load discounted", rollout(params, disc, tokens).loads[-1].round(3))
