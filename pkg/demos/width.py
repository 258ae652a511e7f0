"""Wider networks forget rare classes less.

Same skewed stream, no replay, hidden layer scaled by k. Accuracy is reported
per frequency band over the last hundred tasks.
"""
import numpy as np

from clstream.config import RunConfig
from clstream.metrics import band_report
from clstream.runner import run_seed

base = RunConfig.from_mapping({
    "dataset.num_classes": 50,
    "scenario.classes_per_task": 10,
    "scenario.sampler": "mixture",
    "scenario.entropy_decrease": 2,
    "scenario.num_tasks": 800,
    "run.iid": "none",
    "run.eval_stride": 10,
})

print("width   " + "  ".join(f"[{lo:g}, {hi:g})" for lo, hi in ((1e-3, 1e-2), (1e-2, 1e-1), (1e-1, 1))))
for k in (1, 4, 16):
    reports = [band_report(r.log, r.class_probs, 50, 10, window=(700, 800))
               for r in (run_seed(base.replace(**{"train.width": k}), s) for s in range(2))]
    cells = []
    for lo, hi in ((1e-3, 1e-2), (1e-2, 1e-1), (1e-1, 1.0)):
        vals = [r.accuracy_in(lo, hi) for r in reports if r.accuracy_in(lo, hi) is not None]
        cells.append(f"{np.mean(vals):.3f}" if vals else "  -  ")
    print(f"k={k:<4}  " + "        ".join(cells))
