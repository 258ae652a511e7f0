"""How often does a class come back?

When every task is a random subset of C out of N classes, each class shows up in
a fraction of tasks that only depends on N and C. This script compares the
closed forms with simulation, then looks at a skewed class mixture.
"""
import math

import numpy as np

from clstream.oracles import mc_class_frequency, mc_kl_estimate
from clstream.stream import (
    ScenarioSpec, build_mixture_probs, expected_class_frequency, expected_class_period,
    expected_task_gap, kl_to_iid,
)

rng = np.random.default_rng(0)

print("uniform streams: closed form vs 20k simulated tasks")
for N, C in [(10, 2), (20, 3), (100, 5), (100, 10)]:
    est = mc_class_frequency(np.ones(N) / N, C, 20_000, rng)[0]
    print(f"  N={N:3d} C={C:2d}  nu={expected_class_frequency(N, C):.4f}  "
          f"sim={est.mean:.4f} +/- {est.std_error:.4f}  "
          f"class every {expected_class_period(N, C):5.1f} tasks, "
          f"exact task repeat every {expected_task_gap(N, C):,} tasks")

# a task is far from the i.i.d. label distribution, but classes still recur
print(f"\nKL to i.i.d. labels for N=10, C=2: closed form {kl_to_iid(10, 2):.4f}, "
      f"estimate {mc_kl_estimate(ScenarioSpec(10, 2, 1), 50_000, rng):.4f}")

# skewed mixture: the more skew, the wider the spread of class frequencies
print(f"\nclass frequency spread under a skewed mixture (N=50, C=10); "
      f"uniform would give {expected_class_frequency(50, 10):.2f} for every class")
for d in (0, 1, 2, 4):
    p = build_mixture_probs(50, d, seed=0)
    nu = np.array([e.mean for e in mc_class_frequency(p, 10, 5000, rng)])
    print(f"  d={d}: rarest {nu.min():.4f}  median {np.median(nu):.4f}  commonest {nu.max():.4f}  "
          f"entropy {-(p * np.log(p)).sum() / math.log(50):.3f} of max")
