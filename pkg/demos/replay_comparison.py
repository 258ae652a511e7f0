"""Replaying the classes that are about to be forgotten.

On a skewed 50-class stream, frequency-band replay keeps a running count of
how often each class appeared and replays the ones whose frequency sits in a
middle band: seen often enough to be worth keeping, rare enough to fade.
Random replay gets the same budget and picks stored classes uniformly.
"""
import numpy as np

from clstream.config import RunConfig
from clstream.metrics import band_report, sign_test
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


def band_accuracy(res):
    report = band_report(res.log, res.class_probs, 50, 10, window=(700, 800))
    return report.accuracy_in(0.01, 0.1)


rows = []
for seed in range(3):
    none = run_seed(base, seed)
    freq = run_seed(base.replace(**{"replay.kind": "frequency"}), seed)
    rand = run_seed(base.replace(**{"replay.kind": "random"}), seed,
                    budget_ratio=freq.ledger.replay_ratio)
    rows.append((band_accuracy(none), band_accuracy(freq), band_accuracy(rand)))
    print(f"seed {seed}: none {rows[-1][0]:.3f}  frequency {rows[-1][1]:.3f}  "
          f"random {rows[-1][2]:.3f}  (replayed {freq.ledger.replay_ratio:.1%} extra classes)")

rows = np.array(rows)
wins, n, p = sign_test(rows[:, 1], rows[:, 2])
print(f"mean accuracy on classes with frequency in [0.01, 0.1]: "
      f"none {rows[:, 0].mean():.3f}, frequency {rows[:, 1].mean():.3f}, random {rows[:, 2].mean():.3f}")
print(f"frequency replay wins {wins}/{n} seeds")
