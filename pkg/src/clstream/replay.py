"""Frequency-band replay and its compute-matched random baseline.

Only classes whose *empirical* per-task occurrence frequency falls inside a
passband ``[nu_low, nu_high]`` are replayed. Frequent classes are left to
ordinary re-occurrence and very rare ones are skipped to bound compute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ReplayBuffer:
    capacity: int = 200
    nu_low: float = 0.01
    nu_high: float = 0.1
    tau: int = 3
    count_selection: bool = True
    stores: dict[int, np.ndarray] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)
    nb_batch: int = 0
    occurrences: dict[int, int] = field(default_factory=dict)
    random_credit: float = 0.0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 <= self.nu_low <= self.nu_high <= 1.0:
            raise ValueError("need 0 <= nu_low <= nu_high <= 1")

    @property
    def total_stored(self) -> int:
        return sum(len(s) for s in self.stores.values())

    def frequency(self, cls: int) -> float:
        return self.counts.get(cls, 0) / self.nb_batch if self.nb_batch else 0.0

    def state(self) -> dict:
        """Counters as plain integer maps, for checkpoints."""
        return {
            "nb_batch": self.nb_batch,
            "counts": dict(self.counts),
            "occurrences": dict(self.occurrences),
            "stored": {c: len(s) for c, s in self.stores.items()},
        }


def select_replay_classes(buf: ReplayBuffer, current_classes) -> list[int]:
    """One task-level call of the frequency-replay selection rule.

    Increments the call counter and the counts of the current classes, then
    selects every other known class whose count exceeds ``tau`` and whose
    frequency ``count / nb_batch`` lies in the passband. A selected class has
    its count incremented too (unless ``count_selection`` is off).
    """
    buf.nb_batch += 1
    current = set(int(c) for c in current_classes)
    for c in current_classes:
        buf.counts[int(c)] = buf.counts.get(int(c), 0) + 1
    selected = []
    for c in sorted(buf.counts):
        if c in current:
            continue
        count = buf.counts[c]
        freq = count / buf.nb_batch
        if count > buf.tau and buf.nu_low <= freq <= buf.nu_high:
            selected.append(c)
            if buf.count_selection:
                buf.counts[c] += 1
    return selected


def renewal_count(capacity: int, occurrence: int) -> int:
    """Stored samples to swap on the ``occurrence``-th visit of a class."""
    if occurrence < 1:
        raise ValueError("occurrence counts start at 1")
    return min(capacity, max(math.ceil(capacity / occurrence), math.ceil(capacity / 20)))


def renew_class_store(buf: ReplayBuffer, cls: int, fresh: np.ndarray, occurrence: int,
                      rng: np.random.Generator) -> int:
    """Refresh the store of ``cls`` with samples from its current visit.

    An under-full store is topped up first; otherwise ``renewal_count`` random
    slots are overwritten by random fresh samples. Returns the number of
    samples written.
    """
    fresh = np.asarray(fresh)
    if len(fresh) == 0:
        return 0
    store = buf.stores.get(cls)
    if store is None or len(store) < buf.capacity:
        have = 0 if store is None else len(store)
        take = min(buf.capacity - have, len(fresh))
        picked = fresh[rng.choice(len(fresh), take, replace=False)]
        buf.stores[cls] = picked.copy() if store is None else np.concatenate([store, picked])
        return take
    k = min(renewal_count(buf.capacity, occurrence), len(fresh))
    slots = rng.choice(len(store), k, replace=False)
    store[slots] = fresh[rng.choice(len(fresh), k, replace=False)]
    return k


def observe_task(buf: ReplayBuffer, X: np.ndarray, y: np.ndarray, classes,
                 rng: np.random.Generator) -> None:
    """Count a visit for each task class and renew its store from the task data."""
    for c in classes:
        c = int(c)
        buf.occurrences[c] = buf.occurrences.get(c, 0) + 1
        renew_class_store(buf, c, X[y == c], buf.occurrences[c], rng)


def merge_with_oversampling(X: np.ndarray, y: np.ndarray, replay_classes,
                            buf: ReplayBuffer) -> tuple[np.ndarray, np.ndarray]:
    """Append each replayed class's store, cycled to the task's mean class size."""
    replay_classes = list(replay_classes)
    if not replay_classes:
        return X, y
    per_class = round(len(y) / len(np.unique(y)))
    parts_X, parts_y = [X], [y]
    for c in replay_classes:
        store = buf.stores.get(c)
        if store is None or len(store) == 0:
            raise ValueError(f"class {c} selected for replay but its store is empty")
        parts_X.append(store[np.arange(per_class) % len(store)])
        parts_y.append(np.full(per_class, c, dtype=y.dtype))
    return np.concatenate(parts_X), np.concatenate(parts_y)


def random_replay_budgeted(buf: ReplayBuffer, current_classes, budget_ratio: float,
                           rng: np.random.Generator) -> list[int]:
    """Uniformly pick stored, non-current classes; ``budget_ratio * C`` per task on average.

    The fractional part carries over between calls so the long-run count is
    exact whenever enough classes are stored.
    """
    if budget_ratio < 0:
        raise ValueError("budget_ratio must be >= 0")
    current = set(int(c) for c in current_classes)
    buf.random_credit += budget_ratio * len(current)
    k = int(math.floor(buf.random_credit))
    buf.random_credit -= k
    eligible = [c for c in sorted(buf.stores) if c not in current and len(buf.stores[c])]
    k = min(k, len(eligible))
    if k == 0:
        return []
    return sorted(int(c) for c in rng.choice(eligible, k, replace=False))


@dataclass
class ComputeLedger:
    base_class_slots: int = 0
    replayed_class_slots: int = 0

    def record(self, task_classes, replayed) -> None:
        self.base_class_slots += len(task_classes)
        self.replayed_class_slots += len(replayed)

    @property
    def replay_ratio(self) -> float:
        """Replayed slots per base slot, i.e. the budget a random baseline must match."""
        return self.replayed_class_slots / self.base_class_slots


def compute_overhead(ledger: ComputeLedger) -> float:
    if ledger.base_class_slots <= 0:
        raise ZeroDivisionError("no base class slots recorded")
    return (ledger.base_class_slots + ledger.replayed_class_slots) / ledger.base_class_slots
