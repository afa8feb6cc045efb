"""
Stability profiles, gaps and outcome labels
===========================================

Profile two models under identical probes, take the capability and
stability gaps, fit a coupling line through a handful of gap pairs, and
classify a student by which disjunct of the outcome rule it satisfies.
"""

import numpy as np

from burdenlab.dynamics import CellParams, ConstraintConfig, DeployedModel
from burdenlab.profiles import (ProbeConfig, capability, coupling_fit, gaps, mean_burden,
                                proposition_outcome, stability_profile)
from burdenlab.tasks import SequenceTask

task = SequenceTask("parity")
cfg = ConstraintConfig()
probe = ProbeConfig(sample_size=500)
rng = np.random.default_rng(3)
a = DeployedModel(CellParams.init(16, 8, 8, rng, scale=0.3), name="calm")
b = DeployedModel(CellParams.init(16, 8, 8, rng, scale=2.0), name="wild")

profiles = {}
for m in (a, b):
    profiles[m.name] = stability_profile(m, cfg, task, probe)
    print(m.name, profiles[m.name].to_dict())

dK, dR = gaps(capability(a, task, probe), capability(b, task, probe),
              profiles["calm"], profiles["wild"])
print("gaps", round(dK, 4), round(dR, 4))
print("outcome", proposition_outcome(dK, dR, mean_burden(b, cfg, task, probe),
                                     mean_burden(a, cfg, task, probe)))

est = coupling_fit([(0.0, 0.01), (0.1, 0.06), (0.2, 0.12), (0.3, 0.15)])
print(f"coupling slope {est.slope:.3f}, intercept {est.intercept:.3f}, rss {est.residual:.5f}")
