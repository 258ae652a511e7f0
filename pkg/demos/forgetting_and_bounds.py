"""Reading a run: forgetting, frequency bands and the accuracy envelope.

Runs a short skewed stream, then walks through the per-task forgetting signal
and the band table. It finishes with the pair of curves that bracket how
accurate a class with a given frequency can be after t tasks.
"""
import numpy as np

from clstream.config import RunConfig
from clstream.metrics import (
    band_report, bound_curves, local_forgetting_series, total_forgetting,
)
from clstream.runner import run_seed

cfg = RunConfig.from_mapping({
    "dataset.num_classes": 20,
    "scenario.classes_per_task": 4,
    "scenario.sampler": "mixture",
    "scenario.entropy_decrease": 2,
    "scenario.num_tasks": 200,
    "run.iid": "none",
})
res = run_seed(cfg, 0)
local = local_forgetting_series(res.log, 20, 4)
defined = [v for v in local if v is not None]
print(f"local forgetting defined on {len(defined)} of {len(local)} task transitions")
print(f"  most negative {min(defined):+.3f}, most positive {max(defined):+.3f}")
print(f"total forgetting {total_forgetting(res.log, 20, 4):+.4f}")

print("\nfrequency bands over the last 50 tasks")
for band in band_report(res.log, res.class_probs, 20, 4, window=(150, 200)).bands:
    acc = "-" if band.mean_accuracy is None else f"{band.mean_accuracy:.3f}"
    print(f"  [{band.low:g}, {band.high:g}): {band.count:2d} classes, accuracy {acc}")

print("\naccuracy envelope for a class seen in 20% of tasks")
for t in (1, 5, 10, 50, 100):
    lo, hi = bound_curves(0.2, t)
    print(f"  t={t:3d}: [{lo:.3f}, {hi:.3f}]")
