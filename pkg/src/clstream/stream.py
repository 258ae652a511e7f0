"""Task-sequence generation over class subsets with controllable re-occurrence.

A scenario draws, for every task ``t``, a set of ``C`` distinct classes out of
``N`` from a probability vector over classes. That vector may be uniform,
imbalanced (``mixture``), or evolve over time (recency penalty, cyclic window,
class removal, class substitution). Alternative samplers replace the weighted
draw with a fixed pair sequence, a restricted pool of tasks, or a
task-of-interest / distractor protocol.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np

from .datasets import InputTransform, LabeledDataset

SAMPLERS = ("uniform", "mixture", "structured", "restricted_pairs", "distractor")
EVOLUTIONS = ("none", "gamma", "cyclic", "removal", "substitution")
TRANSFORMS = ("identity", "gaussian_noise", "noise_or_identity", "pixel_permutation")

INT64_MAX = 2**63 - 1


# --- closed forms --------------------------------------------------------------


def _check_nc(N: int, C: int) -> None:
    if not 1 <= C <= N:
        raise ValueError(f"need 1 <= C <= N, got N={N}, C={C}")


def expected_class_frequency(N: int, C: int) -> float:
    """Per-task probability that a given class is drawn under uniform sampling."""
    _check_nc(N, C)
    miss = 1.0
    for i in range(C):
        miss *= 1.0 - 1.0 / (N - i)
    return 1.0 - miss


def expected_class_period(N: int, C: int) -> float:
    """Expected number of tasks between two occurrences of a class."""
    return 1.0 / expected_class_frequency(N, C)


def expected_class_frequency_nonuniform(p: float, N: int, C: int) -> float:
    """Per-task occurrence frequency of a class drawn with probability ``p``.

    Each of the ``C`` sequential draws is approximated as hitting the class with
    probability ``p * N / (N - i)``, i.e. as if the classes already drawn had
    average mass. It is exact for ``C = 1`` and for uniform vectors.
    """
    _check_nc(N, C)
    miss = 1.0
    for i in range(C):
        factor = p * N / (N - i)
        if not 0.0 <= factor <= 1.0:
            raise ValueError(
                f"p={p} gives draw probability {factor:.4g} outside [0, 1] (N={N}, C={C})"
            )
        miss *= 1.0 - factor
    return 1.0 - miss


def expected_task_gap(N: int, C: int) -> int:
    """Number of distinct ``C``-class tasks, i.e. the expected gap between exact repeats."""
    _check_nc(N, C)
    n = math.comb(N, C)
    if n > INT64_MAX:
        raise OverflowError(f"binomial({N}, {C}) does not fit in 64 bits")
    return n


def kl_to_iid(N: int, C: int) -> float:
    _check_nc(N, C)
    return math.log(N / C)


# --- class distributions -------------------------------------------------------


def build_mixture_probs(N: int, d: float, seed: int | None = None,
                        shuffle: bool = True) -> np.ndarray:
    """Imbalanced class-probability vector; ``d`` sharpens the imbalance.

    ``d = 0`` is uniform. The unshuffled vector is decreasing in class index.
    """
    if N < 2 or d < 0:
        raise ValueError("need N >= 2 and d >= 0")
    lam = 1.0 / N
    probs = np.ones(N) / N
    probs = probs - (1.0 / N) * np.arange(N) * lam
    if (probs < 0).any():
        raise ValueError("tilted probability vector has negative entries")
    probs /= probs.sum()
    probs = probs**d / (probs**d).sum()
    if shuffle:
        np.random.default_rng(seed).shuffle(probs)
    return probs


def apply_gamma_penalty(probs: np.ndarray, sampled, gamma: float) -> np.ndarray:
    """Divide the mass of just-sampled classes by ``gamma`` and renormalise."""
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    out = np.array(probs, dtype=np.float64)
    out[list(sampled)] /= gamma
    return out / out.sum()


def cyclic_window_classes(t: int, N: int, W: int, cycle: int) -> list[int]:
    """The ``W`` contiguous classes (mod ``N``) active at task ``t``.

    The window advances ``N / cycle`` classes per task when ``N >= cycle``, or
    one class every ``cycle / N`` tasks otherwise, so it repeats every
    ``cycle`` tasks.
    """
    if not 1 <= W <= N or cycle < 1:
        raise ValueError(f"need 1 <= W <= N and cycle >= 1 (W={W}, N={N}, cycle={cycle})")
    if N >= cycle:
        if N % cycle:
            raise ValueError(f"cycle {cycle} must divide N={N}")
        start = (t * (N // cycle)) % N
    else:
        if cycle % N:
            raise ValueError(f"N={N} must divide cycle {cycle}")
        start = (t // (cycle // N)) % N
    return [(start + i) % N for i in range(W)]


@dataclass
class ClassDistribution:
    """Class-sampling probabilities plus the rule that evolves them.

    ``evolution`` is one of :data:`EVOLUTIONS`; its parameters live in
    ``params``. Call :meth:`for_task` before drawing task ``t`` and
    :meth:`observe` after.
    """

    probs: np.ndarray
    evolution: str = "none"
    params: dict = field(default_factory=dict)
    last_sampled: tuple[int, ...] = ()
    t: int = 0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.evolution not in EVOLUTIONS:
            raise ValueError(f"unknown evolution {self.evolution!r}")
        self._check()
        self._base = self.probs.copy()

    @property
    def N(self) -> int:
        return len(self.probs)

    def _check(self):
        if (self.probs < 0).any() or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("class probabilities must be non-negative and sum to 1")

    def _uniform_on(self, classes) -> np.ndarray:
        probs = np.zeros(self.N)
        probs[list(classes)] = 1.0 / len(classes)
        return probs

    def for_task(self, t: int) -> np.ndarray:
        self.t = t
        ev, p = self.evolution, self.params
        if ev == "cyclic":
            self.probs = self._uniform_on(cyclic_window_classes(t, self.N, p["window"], p["cycle"]))
        elif ev == "removal" and t >= p["shift_task"]:
            kept = np.zeros(self.N)
            kept[list(p["kept"])] = self._base[list(p["kept"])]
            self.probs = kept / kept.sum()
        elif ev == "substitution":
            self.probs = self._uniform_on(p["first"] if t < p["shift_task"] else p["second"])
        self._check()
        return self.probs

    def observe(self, classes) -> None:
        self.last_sampled = tuple(classes)
        if self.evolution == "gamma":
            self.probs = apply_gamma_penalty(self.probs, classes, self.params["gamma"])
            self._check()


# --- scenarios -----------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    """Declarative description of one task stream (everything but the learner)."""

    num_classes: int
    classes_per_task: int
    num_tasks: int
    sampler: str = "uniform"
    entropy_decrease: float = 0.0
    flip_p: float = 0.0
    pairs_fraction: float = 1.0
    interest_classes: tuple[int, ...] | None = None
    revisit_period: int | None = None
    evolution: str = "none"
    gamma: float = 1.0
    window: int = 10
    cycle: int = 100
    shift_task: int = 0
    kept_classes: tuple[int, ...] | None = None
    first_classes: tuple[int, ...] | None = None
    second_classes: tuple[int, ...] | None = None
    transform: str = "identity"
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        N, C = self.num_classes, self.classes_per_task
        _check_nc(N, C)
        if self.num_tasks < 1:
            raise ValueError("num_tasks must be >= 1")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform policy {self.transform!r}")
        if not 0.0 <= self.flip_p <= 1.0:
            raise ValueError("flip_p must lie in [0, 1]")
        if not 0.0 < self.pairs_fraction <= 1.0:
            raise ValueError("pairs_fraction must lie in (0, 1]")
        if self.sampler == "structured" and C != 2:
            raise ValueError("the structured sampler is defined for C = 2 only")
        if self.sampler == "distractor":
            interest = self.interest_classes
            if interest is not None and (len(set(interest)) != C
                                         or not all(0 <= c < N for c in interest)):
                raise ValueError(f"interest_classes must be {C} distinct ids in [0, {N})")
            if N - C < C:
                raise ValueError("distractor tasks need at least C non-interest classes")
            if self.revisit_period is not None and self.revisit_period < 1:
                raise ValueError("revisit_period must be >= 1 (or None for never)")
        if self.evolution not in EVOLUTIONS:
            raise ValueError(f"unknown evolution {self.evolution!r}")
        if self.evolution == "gamma" and self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.evolution == "cyclic":
            cyclic_window_classes(0, N, self.window, self.cycle)
            if self.window < C:
                raise ValueError("cyclic window must hold at least C classes")
        if self.evolution in ("removal", "substitution") and self.shift_task < 0:
            raise ValueError("shift_task must be >= 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def N(self) -> int:
        return self.num_classes

    @property
    def C(self) -> int:
        return self.classes_per_task

    @property
    def T(self) -> int:
        return self.num_tasks


def build_distribution(spec: ScenarioSpec) -> ClassDistribution:
    N = spec.num_classes
    if spec.sampler == "mixture":
        probs = build_mixture_probs(N, spec.entropy_decrease, spec.seed)
    else:
        probs = np.ones(N) / N
    params: dict = {}
    if spec.evolution == "gamma":
        params = {"gamma": spec.gamma}
    elif spec.evolution == "cyclic":
        params = {"window": spec.window, "cycle": spec.cycle}
    elif spec.evolution == "removal":
        kept = spec.kept_classes if spec.kept_classes is not None else tuple(range(N // 2))
        params = {"shift_task": spec.shift_task, "kept": tuple(kept)}
    elif spec.evolution == "substitution":
        first = spec.first_classes if spec.first_classes is not None else tuple(range(N // 2))
        second = (spec.second_classes if spec.second_classes is not None
                  else tuple(c for c in range(N) if c not in first))
        if set(first) & set(second):
            raise ValueError("substitution periods must use disjoint classes")
        params = {"shift_task": spec.shift_task, "first": tuple(first), "second": tuple(second)}
    return ClassDistribution(probs, spec.evolution, params)


@dataclass(frozen=True, eq=False)
class TaskSpec:
    t: int
    classes: tuple[int, ...]
    sample_ids: np.ndarray
    transform: InputTransform = field(default_factory=InputTransform)
    kind: str = "regular"

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise ValueError(f"task {self.t} has repeated classes {self.classes}")


def draw_classes(probs: np.ndarray, C: int, rng: np.random.Generator) -> list[int]:
    """Draw ``C`` distinct classes one at a time, each proportional to the
    remaining mass."""
    weights = np.array(probs, dtype=np.float64)
    if np.count_nonzero(weights > 0) < C:
        raise ValueError(f"fewer than {C} classes have positive probability")
    chosen = []
    for _ in range(C):
        cdf = np.cumsum(weights)
        c = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        c = min(c, len(weights) - 1)
        while weights[c] == 0:  # guards the u*total == cdf edge
            c -= 1
        chosen.append(c)
        weights[c] = 0.0
    return chosen


@lru_cache(maxsize=32)
def _all_tasks(N: int, C: int) -> tuple[tuple[int, ...], ...]:
    if expected_task_gap(N, C) > 2_000_000:
        raise ValueError(f"too many tasks to enumerate for N={N}, C={C}")
    return tuple(itertools.combinations(range(N), C))


@lru_cache(maxsize=32)
def _restricted_pool(N: int, C: int, fraction: float, seed: int) -> tuple[tuple[int, ...], ...]:
    tasks = _all_tasks(N, C)
    keep = math.ceil(fraction * len(tasks))
    order = np.random.default_rng([seed, 0x5E1EC7]).permutation(len(tasks))
    return tuple(tasks[i] for i in order[:keep])


def interest_classes(spec: ScenarioSpec) -> tuple[int, ...]:
    if spec.interest_classes is not None:
        return tuple(spec.interest_classes)
    rng = np.random.default_rng([spec.seed, 0x1E7E57])
    return tuple(sorted(int(c) for c in rng.choice(spec.num_classes, spec.classes_per_task,
                                                   replace=False)))


def _flip(pair, N: int, flip_p: float, rng) -> list[int]:
    out = list(pair)
    for i in range(len(out)):
        if rng.random() < flip_p:
            others = [c for c in range(N) if c not in out]
            out[i] = others[int(rng.integers(len(others)))]
    return out


def _task_transform(spec: ScenarioSpec, input_dim: int | None, rng) -> InputTransform:
    policy = spec.transform
    if policy == "identity":
        return InputTransform.identity()
    seed = int(rng.integers(2**31))
    if policy == "noise_or_identity" and rng.random() < 0.5:
        return InputTransform.identity()
    if policy in ("gaussian_noise", "noise_or_identity"):
        return InputTransform.gaussian_noise(spec.noise_sigma, seed)
    if input_dim is None:
        raise ValueError("pixel permutations need the dataset's input_dim")
    return InputTransform.random_permutation(input_dim, seed)


def _gather(dataset: LabeledDataset | None, classes) -> np.ndarray:
    if dataset is None:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate([dataset.class_index[c] for c in classes]))


def sample_task(spec: ScenarioSpec, dist: ClassDistribution, t: int,
                rng: np.random.Generator, dataset: LabeledDataset | None = None) -> TaskSpec:
    """Produce task ``t``. ``dist`` must already be updated for ``t``."""
    N, C = spec.num_classes, spec.classes_per_task
    input_dim = dataset.input_dim if dataset is not None else None
    kind = "regular"
    if spec.sampler == "structured":
        pairs = _all_tasks(N, 2)
        classes = _flip(pairs[t % len(pairs)], N, spec.flip_p, rng)
        transform = _task_transform(spec, input_dim, rng)
    elif spec.sampler == "restricted_pairs":
        pool = _restricted_pool(N, C, spec.pairs_fraction, spec.seed)
        classes = list(pool[int(rng.integers(len(pool)))])
        transform = _task_transform(spec, input_dim, rng)
    elif spec.sampler == "distractor":
        interest = interest_classes(spec)
        period = spec.revisit_period
        if t == 0 or (period is not None and t % period == 0):
            classes, transform, kind = list(interest), InputTransform.identity(), "interest"
        else:
            others = np.array([c for c in range(N) if c not in interest])
            classes = [int(c) for c in rng.choice(others, C, replace=False)]
            if input_dim is None:
                raise ValueError("distractor tasks need a dataset for their permutation")
            transform = InputTransform.random_permutation(input_dim, int(rng.integers(2**31)))
            kind = "distractor"
    else:
        classes = draw_classes(dist.probs, C, rng)
        transform = _task_transform(spec, input_dim, rng)
    classes = tuple(int(c) for c in classes)
    return TaskSpec(t, classes, _gather(dataset, classes), transform, kind)


class TaskStream:
    """Iterate the ``T`` tasks of a scenario; a pure function of ``spec``."""

    def __init__(self, spec: ScenarioSpec, dataset: LabeledDataset | None = None):
        self.spec = spec
        self.dataset = dataset
        self.distribution = build_distribution(spec)
        self.rng = np.random.default_rng([spec.seed, 0x57AEA4])

    def __len__(self) -> int:
        return self.spec.num_tasks

    def __iter__(self) -> Iterator[TaskSpec]:
        for t in range(self.spec.num_tasks):
            yield self.next_task(t)

    def next_task(self, t: int) -> TaskSpec:
        self.distribution.for_task(t)
        task = sample_task(self.spec, self.distribution, t, self.rng, self.dataset)
        self.distribution.observe(task.classes)
        return task
