"""Accuracy logs, forgetting, frequency-band reports and retention probes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .datasets import LabeledDataset
from .learner import Network, Optimizer, evaluate, task_arrays, train_arrays
from .stream import TaskSpec, expected_class_frequency_nonuniform

DEFAULT_BAND_EDGES = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
SMOOTHING_WINDOW = 20


@dataclass(frozen=True, eq=False)
class TaskRecord:
    t: int
    overall_acc: float
    per_class_acc: np.ndarray
    classes: tuple[int, ...]
    gradient_steps: int = 0
    replayed_classes: tuple[int, ...] = ()
    cumulative_samples: int = 0


@dataclass
class MetricsLog:
    records: list[TaskRecord] = field(default_factory=list)
    iid_accuracy: float | None = None

    def append(self, record: TaskRecord) -> None:
        if self.records and record.t <= self.records[-1].t:
            raise ValueError(f"record for task {record.t} arrives after task {self.records[-1].t}")
        acc = np.asarray(record.per_class_acc, dtype=np.float64)
        finite = acc[~np.isnan(acc)]
        if ((finite < 0) | (finite > 1)).any():
            raise ValueError("per-class accuracies must lie in [0, 1]")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def by_task(self, t: int) -> TaskRecord:
        for r in reversed(self.records):
            if r.t == t:
                return r
        raise KeyError(f"no record for task {t}")

    @property
    def tasks(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    @property
    def overall(self) -> np.ndarray:
        return np.array([r.overall_acc for r in self.records])

    def per_class_matrix(self) -> np.ndarray:
        return np.vstack([r.per_class_acc for r in self.records])


def moving_average(series, window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries average what is available."""
    x = np.asarray(series, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def local_forgetting(log: MetricsLog, t: int, N: int, C: int | None = None) -> float | None:
    """Mean per-class accuracy change between tasks ``t-1`` and ``t`` over the
    classes outside task ``t``. Negative values are forgetting.

    Returns ``None`` when task ``t`` repeats the class set of ``t-1`` or leaves
    no class outside it, since there is nothing disjoint to measure.
    """
    if t < 1:
        raise ValueError("local forgetting needs a previous task")
    cur, prev = log.by_task(t), log.by_task(t - 1)
    in_task = set(cur.classes)
    if in_task == set(prev.classes):
        return None
    others = [j for j in range(N) if j not in in_task]
    if not others:
        return None
    diffs = [float(cur.per_class_acc[j]) - float(prev.per_class_acc[j]) for j in others]
    return math.fsum(diffs) / len(diffs)


def local_forgetting_series(log: MetricsLog, N: int, C: int | None = None) -> list[float | None]:
    out = []
    evaluated = set(int(t) for t in log.tasks)
    for r in log.records[1:]:
        out.append(local_forgetting(log, r.t, N, C) if r.t - 1 in evaluated else None)
    return out


def total_forgetting(log: MetricsLog, N: int | None = None, C: int | None = None) -> float:
    if len(log) < 2:
        raise ValueError("total forgetting needs at least two records")
    if N is None:
        N = len(log.records[0].per_class_acc)
    values = [v for v in local_forgetting_series(log, N, C) if v is not None]
    if not values:
        raise ValueError("no task pair has a defined local forgetting")
    return math.fsum(values) / len(values)


@dataclass
class Band:
    low: float
    high: float
    mean_accuracy: float | None
    count: int
    classes: tuple[int, ...] = ()


@dataclass
class BandReport:
    bands: list[Band]
    task_window: tuple[int, int]

    def band_containing(self, nu: float) -> Band:
        for b in self.bands:
            if b.low <= nu < b.high:
                return b
        return self.bands[-1]

    def accuracy_in(self, low: float, high: float) -> float | None:
        """Class-weighted mean accuracy over the bands inside ``[low, high)``."""
        acc = [(b.mean_accuracy, b.count) for b in self.bands
               if b.low >= low and b.high <= high and b.count]
        if not acc:
            return None
        return sum(a * n for a, n in acc) / sum(n for _, n in acc)


def class_frequencies(class_probs, N: int, C: int) -> np.ndarray:
    return np.array([expected_class_frequency_nonuniform(float(p), N, C) if p > 0 else 0.0
                     for p in class_probs])


def window_class_accuracy(log: MetricsLog, window: tuple[int, int]) -> np.ndarray:
    t0, t1 = window
    rows = [r.per_class_acc for r in log.records if t0 <= r.t < t1]
    if not rows:
        raise ValueError(f"no evaluated task in window [{t0}, {t1})")
    return np.nanmean(np.vstack(rows), axis=0)


def band_report(log: MetricsLog, class_probs, N: int, C: int,
                band_edges=DEFAULT_BAND_EDGES, window: tuple[int, int] | None = None,
                frequencies=None) -> BandReport:
    """Group classes by expected occurrence frequency and average their accuracy.

    Bands are half-open ``[e_i, e_{i+1})`` except the last, which includes its
    upper edge. Classes below the first edge land in an extra ``[0, e_0)``
    band. Pass ``frequencies`` to bin by precomputed values instead.
    """
    if window is None:
        window = (int(log.tasks[0]), int(log.tasks[-1]) + 1)
    acc = window_class_accuracy(log, window)
    nu = class_frequencies(class_probs, N, C) if frequencies is None else np.asarray(frequencies)
    positive = np.asarray(class_probs) > 0
    edges = list(band_edges)
    if (nu[positive] < edges[0]).any():
        edges = [0.0] + edges
    bands = []
    for i in range(len(edges) - 1):
        lo, hi = edges[i], edges[i + 1]
        last = i == len(edges) - 2
        member = positive & (nu >= lo) & ((nu <= hi) if last else (nu < hi))
        members = tuple(int(c) for c in np.flatnonzero(member))
        mean = float(np.mean(acc[list(members)])) if members else None
        bands.append(Band(lo, hi, mean, len(members), members))
    return BandReport(bands, tuple(window))


def bound_curves(nu: float, t: int, plateau: float = 0.8) -> tuple[float, float]:
    """Expected class accuracy for a learner that reaches ``plateau`` on current
    classes and then forgets everything (lower) or never forgets (upper)."""
    if not 0.0 <= nu <= 1.0 or not 0.0 <= plateau <= 1.0:
        raise ValueError("nu and plateau must lie in [0, 1]")
    if t < 1:
        raise ValueError("bounds start at task 1")
    return plateau * nu, plateau * (1.0 - (1.0 - nu) ** t)


def normalized_accuracy(log: MetricsLog) -> np.ndarray:
    if log.iid_accuracy is None or not log.iid_accuracy > 0:
        raise ValueError("normalisation needs a positive IID baseline accuracy")
    return log.overall / log.iid_accuracy


def meta_test_accuracy(net: Network, opt_recipe: Optimizer, interest_task: TaskSpec,
                       train: LabeledDataset, test: LabeledDataset, batch_size: int = 64,
                       masking: bool = True, rng: np.random.Generator | None = None) -> float:
    """Accuracy on the interest classes after one epoch of fine-tuning a copy."""
    probe = net.copy()
    rng = rng if rng is not None else np.random.default_rng(0)
    X, y = task_arrays(interest_task, train)
    train_arrays(probe, opt_recipe.fresh(), X, y, 1, batch_size, masking, rng)
    acc, _ = evaluate(probe, test, classes=interest_task.classes)
    return acc


def meta_test_probe(net: Network, opt_recipe: Optimizer, interest_task: TaskSpec,
                    train: LabeledDataset, test: LabeledDataset, first_occurrence_acc: float,
                    batch_size: int = 64, masking: bool = True,
                    rng: np.random.Generator | None = None) -> float:
    """Meta-test accuracy divided by its value at the interest task's first occurrence."""
    if not first_occurrence_acc > 0:
        raise ValueError("first-occurrence accuracy must be positive")
    acc = meta_test_accuracy(net, opt_recipe, interest_task, train, test, batch_size,
                             masking, rng)
    return acc / first_occurrence_acc


def sign_test(a, b) -> tuple[int, int, float]:
    """Paired one-sided sign test that ``a`` beats ``b``: (wins, non-ties, p-value)."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    wins, n = int((diff > 0).sum()), int((diff != 0).sum())
    p = stats.binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0
    return wins, n, float(p)
