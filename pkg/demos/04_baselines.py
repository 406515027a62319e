"""
FedSPD next to the baselines
============================

Same data, same graph, same seeds; only the algorithm changes.
``compare_runs`` refuses records that do not share seeds.
"""

from fedspd import runner

base = {
    "topology": {"kind": "er", "n": 30, "degree": 6},
    "data": {"generator": "rotation_classification", "points_per_client": 40, "dim": 6,
             "n_classes": 4, "test_fraction": 0.25},
    "protocol": {"rounds": 40, "lr": 0.1, "lr_decay_every": 10, "fine_tune_epochs": 3},
    "run": {"seed": 3},
}
records = [runner.run_experiment(runner.config_from_dict({**base, "algorithm": a}))
           for a in runner.ALGORITHMS]
print(runner.compare_runs(records))
