"""Slow, independent cross-checks used by the test suite.

Nothing here calls into the code paths it verifies: the forward pass is
re-done with explicit loops, losses are recomputed from scratch, and the
forgetting metrics are re-evaluated with exact rational arithmetic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .datasets import LabeledDataset
from .stream import ScenarioSpec, draw_classes


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    std_error: float
    trials: int

    def __post_init__(self):
        if self.trials < 1000:
            raise ValueError("Monte-Carlo estimates need at least 1000 trials")

    def contains(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.std_error

    @classmethod
    def from_samples(cls, samples) -> "MonteCarloEstimate":
        x = np.asarray(samples, dtype=np.float64)
        return cls(float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x))), len(x))


def mc_class_frequency(probs, C: int, trials: int,
                       rng: np.random.Generator) -> list[MonteCarloEstimate]:
    """Empirical per-task occurrence frequency of every class."""
    probs = np.asarray(probs, dtype=np.float64)
    hits = np.zeros((trials, len(probs)), dtype=np.int8)
    for i in range(trials):
        hits[i, draw_classes(probs, C, rng)] = 1
    return [MonteCarloEstimate.from_samples(hits[:, c]) for c in range(len(probs))]


def gumbel_top_k_frequency(probs, C: int, trials: int,
                           rng: np.random.Generator) -> list[MonteCarloEstimate]:
    """Same quantity via the Gumbel-top-k trick, which samples ordered draws
    without replacement with exactly the sequential-proportional law."""
    logp = np.log(np.asarray(probs, dtype=np.float64))
    keys = logp + rng.gumbel(size=(trials, len(logp)))
    top = np.argpartition(-keys, C - 1, axis=1)[:, :C]
    hits = np.zeros((trials, len(logp)), dtype=np.int8)
    np.put_along_axis(hits, top, 1, axis=1)
    return [MonteCarloEstimate.from_samples(hits[:, c]) for c in range(len(logp))]


def exact_inclusion_probability(probs, C: int) -> np.ndarray:
    """P(class in task) under sequential proportional draws, by enumerating
    every ordered sequence of ``C`` distinct classes (small ``N`` only)."""
    probs = [Fraction(p).limit_denominator(10**12) for p in probs]
    N = len(probs)
    total = sum(probs)
    incl = [Fraction(0)] * N
    for seq in itertools.permutations(range(N), C):
        pr, left = Fraction(1), total
        for c in seq:
            pr *= probs[c] / left
            left -= probs[c]
        for c in seq:
            incl[c] += pr
    return np.array([float(x) for x in incl])


def mc_kl_estimate(spec: ScenarioSpec, trials: int, rng: np.random.Generator,
                   dataset: LabeledDataset | None = None, marginal: str = "empirical") -> float:
    """Estimate E_t[KL(p(y | S_t) || p(y))] from sampled tasks.

    Each trial draws a uniform task and one label from it (through a random
    training sample when ``dataset`` is given). The task-conditional law is the
    within-task class share; the marginal is either the exact ``1/N`` or the
    plug-in frequency of labels across all trials.
    """
    N, C = spec.num_classes, spec.classes_per_task
    uniform = np.ones(N) / N
    cond, labels = [], np.empty(trials, dtype=np.int64)
    for i in range(trials):
        classes = draw_classes(uniform, C, rng)
        if dataset is None:
            y = classes[int(rng.integers(C))]
            share = 1.0 / C
        else:
            pool = np.concatenate([dataset.class_index[c] for c in classes])
            y = int(dataset.labels[pool[int(rng.integers(len(pool)))]])
            share = len(dataset.class_index[y]) / len(pool)
        labels[i] = y
        cond.append(share)
    if marginal == "exact":
        if dataset is None:
            p_y = np.full(trials, 1.0 / N)
        else:
            p_y = np.array([len(dataset.class_index[y]) for y in labels]) / len(dataset)
    else:
        freq = np.bincount(labels, minlength=N) / trials
        p_y = freq[labels]
    return float(np.mean(np.log(np.asarray(cond) / p_y)))


# --- reference network arithmetic ----------------------------------------------


def _conv_loops(x, w, b):
    # x: (B, H, W, Cin); w: (Cout, Cin, k, k)
    B, H, W, _ = x.shape
    cout, _, k, _ = w.shape
    out = np.empty((B, H - k + 1, W - k + 1, cout))
    for i in range(H - k + 1):
        for j in range(W - k + 1):
            patch = x[:, i:i + k, j:j + k, :]  # (B, k, k, Cin)
            out[:, i, j, :] = np.einsum("bhwc,ochw->bo", patch, w) + b
    return out


def _pool_loops(x):
    B, H, W, C = x.shape
    out = np.empty((B, H // 2, W // 2, C))
    for i in range(H // 2):
        for j in range(W // 2):
            out[:, i, j, :] = x[:, 2 * i:2 * i + 2, 2 * j:2 * j + 2, :].max(axis=(1, 2))
    return out


def reference_forward(net, X) -> np.ndarray:
    """Logits recomputed from ``net.params`` and ``net.architecture`` alone."""
    P, arch = net.params, net.architecture
    x = np.asarray(X, dtype=np.float64)
    relu = lambda a: np.where(a > 0, a, 0.0)  # noqa: E731
    if arch["kind"] == "mlp":
        for i in range(len(arch["hidden"])):
            x = relu(np.einsum("bi,oi->bo", x, P[f"fc{i}.weight"]) + P[f"fc{i}.bias"])
    else:
        H, W = arch["image_shape"]
        x = x.reshape(len(x), H, W, 1)
        for name in ("conv1", "conv2"):
            x = relu(_pool_loops(_conv_loops(x, P[f"{name}.weight"], P[f"{name}.bias"])))
        x = x.reshape(len(x), -1)
        x = relu(np.einsum("bi,oi->bo", x, P["fc1.weight"]) + P["fc1.bias"])
    return np.einsum("bi,oi->bo", x, P["head.weight"]) + P["head.bias"]


def reference_loss(net, inputs, targets, present=None) -> float:
    logits = reference_forward(net, inputs)
    if present is not None:
        absent = [c for c in range(logits.shape[1]) if c not in set(present)]
        logits[:, absent] = -1e9
    total = 0.0
    for row, y in zip(logits, targets):
        m = row.max()
        total += m + math.log(sum(math.exp(v - m) for v in row)) - row[y]
    return total / len(targets)


def finite_difference_grads(net, batch, masking: bool, step: float = 1e-4) -> dict:
    """Central differences of the reference loss for every parameter entry."""
    if step <= 0:
        raise ValueError("step must be positive")
    if net.num_parameters > 10_000:
        raise ValueError("network too large for entrywise finite differences")
    present = batch.present_classes if masking else None
    grads = {}
    for name, p in net.params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = reference_loss(net, batch.inputs, batch.targets, present)
            flat[i] = orig - step
            down = reference_loss(net, batch.inputs, batch.targets, present)
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise ArithmeticError(f"non-finite loss perturbing {name}[{i}]")
            gflat[i] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def gradients_agree(analytic, numeric, rtol: float = 1e-4, atol: float = 1e-6) -> bool:
    """Entrywise: relative error below ``rtol`` or absolute error below ``atol``."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    err = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    return bool(np.all((err <= rtol * scale) | (err <= atol)))


# --- forgetting re-derivation ----------------------------------------------------


def recompute_metrics(matrix, task_classes, N: int, C: int):
    """Local forgetting for each consecutive pair and their mean, from a raw
    per-class accuracy matrix (rows = consecutive tasks)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != N or len(task_classes) != len(matrix):
        raise ValueError("matrix must be (tasks x N) with one class set per row")
    if len(matrix) < 2:
        raise ValueError("need at least two tasks")
    local = []
    for t in range(1, len(matrix)):
        cur = set(task_classes[t])
        outside = [j for j in range(N) if j not in cur]
        if cur == set(task_classes[t - 1]) or not outside:
            local.append(None)
            continue
        exact = Fraction(0)
        for j in outside:
            exact += Fraction(matrix[t, j] - matrix[t - 1, j])
        local.append(float(exact) / len(outside))
    defined = [v for v in local if v is not None]
    total = Fraction(0)
    for v in defined:
        total += Fraction(v)
    return local, float(total) / len(defined)
