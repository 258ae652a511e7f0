"""Forgetting hides knowledge that is still there.

A two-class task of interest comes back every fifth task; in between, the
network trains on distractor tasks whose inputs are pixel-permuted. After each
task we measure two things about the task of interest: plain accuracy with the
full output layer, and accuracy after one quick epoch of retraining on it
(from a copy, so the stream itself is untouched). Both are divided by their
value at the first visit.
"""
from clstream.config import RunConfig
from clstream.runner import run_retention_protocol

cfg = RunConfig.from_mapping({
    "scenario.sampler": "distractor",
    "scenario.revisit_period": 5,
    "scenario.num_tasks": 26,
    "train.masking": False,
    "train.lr": 0.05,
    "run.iid": "none",
})
trace = run_retention_protocol(cfg, seed=0)
zero, meta = trace.normalized("zero_shot"), trace.normalized("meta_test")
print(f"task of interest: classes {trace.interest}")
print(" task  kind        plain   after one epoch")
for t, kind, z, m in zip(trace.tasks, trace.kinds, zero, meta):
    print(f" {t:4d}  {kind:<10}  {z:5.2f}   {m:5.2f}")
i = trace.index_after_distractors(20)
print(f"\nafter 20 distractors: plain {zero[i]:.2f}, after one epoch {meta[i]:.2f}")
