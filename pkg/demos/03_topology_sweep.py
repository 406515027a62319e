"""
Topology sweep
==============

A config may carry a ``sweep`` block; each combination becomes one run.
Here: three graph families at three average degrees on one dataset.
"""

from fedspd import runner

cfg = runner.config_from_dict({
    "topology": {"n": 30},
    "data": {"generator": "rotation_classification", "points_per_client": 40, "dim": 6,
             "n_classes": 4, "test_fraction": 0.25},
    "protocol": {"rounds": 30, "lr": 0.1, "lr_decay_every": 10, "fine_tune_epochs": 3},
    "sweep": {"topology.kind": ["er", "ba", "rgg"], "topology.degree": [4, 8]},
})
for rec in runner.run_sweep(cfg, jobs=2):
    t = rec.config["topology"]
    print(f"{t['kind']:>3} degree {t['degree']:4.1f}  test acc {rec.final['test_acc_mean']:.3f}")
