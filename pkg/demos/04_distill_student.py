"""
Output-only distillation
========================

Label fresh inputs with a frozen teacher's logits and fit a half-size student
to them with temperature-scaled KL. The student never sees teacher states.
"""

import numpy as np

from burdenlab.distillation import DistillConfig, behavior_discrepancy, distill, make_student
from burdenlab.dynamics import CellParams, ConstraintConfig, DeployedModel
from burdenlab.profiles import ProbeConfig, capability
from burdenlab.tasks import SequenceTask
from burdenlab.training import ObjectiveWeights, OptimConfig, train

task = SequenceTask("copy", vocab=6, length=4, delay=1)
cfg = ConstraintConfig()
params, _ = train(CellParams.init(16, 6, 6, np.random.default_rng(0)), cfg, ObjectiveWeights(),
                  task, OptimConfig(lr=0.5, epochs=200, steps_per_epoch=5))
teacher = DeployedModel(params, "soft", cfg, name="teacher")

probe = ProbeConfig(sample_size=500)
print("teacher accuracy", capability(teacher, task, probe).accuracy)

for budget in (250, 1000, 4000):
    dcfg = DistillConfig(budget=budget, shrink=0.5, optim=OptimConfig(lr=0.05, epochs=20, seed=1))
    arm = distill(teacher, make_student((16, 6, 6), 0.5, 1), dcfg, task)
    student = DeployedModel(arm.student)
    d, se = behavior_discrepancy(student, teacher, task, 500, 0)
    print(f"budget {budget:5d}: KD loss {arm.initial_loss:.3f} -> {arm.final_loss:.3f}, "
          f"accuracy {capability(student, task, probe).accuracy:.3f}, "
          f"discrepancy {d:.3f} +/- {se:.3f}")
