"""
A complete paired experiment in miniature
=========================================

The harness trains both teacher families per (seed, task), distills matched
students at every budget, profiles everything and summarizes the four
hypotheses. The full default run is ``burdenlab experiment --config
configs/default.ini``; this one finishes in a couple of minutes.
"""

import json
import tempfile

from burdenlab.harness import emit_report, parse_config, run_experiment

cfg = parse_config("""
[experiment]
seeds = 0 1
tasks = copy
[task]
vocab = 6
length = 4
delay = 1
[teacher]
n = 16
d = 6
[optim]
lr = 0.5
epochs = 200
steps_per_epoch = 5
[distill]
budgets = 250 1000 4000
shrink = 0.5
epochs = 20
discrepancy_samples = 200
[probe]
sample_size = 300
""")

out = tempfile.mkdtemp(prefix="burdenlab-demo-")
bundle = run_experiment(cfg, out)
for path in emit_report(bundle, "json", out) + emit_report(bundle, "csv", out):
    print("wrote", path)

for r in bundle.records:
    for fam in ("base", "cc"):
        t = r["teachers"][fam]
        print(f"seed {r['seed']} {fam:4s} teacher acc {t['accuracy']:.3f}")
        for s in r["students"][fam]:
            print(f"    budget {s['budget']:5d}  dK {s['dK']:.3f}  dR {s['dR']:.3f}  {s['outcome']}")

print(json.dumps(bundle.directions, indent=2))
