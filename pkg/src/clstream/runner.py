"""Experiment orchestration: the task loop, IID baselines and CSV output."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .config import RunConfig
from .datasets import LabeledDataset, load_idx_dataset, make_blob_dataset
from .learner import (Network, Optimizer, accuracy_on, build_network, evaluate, task_arrays,
                      train_arrays)
from .metrics import MetricsLog, TaskRecord, local_forgetting, meta_test_accuracy
from .replay import (ComputeLedger, ReplayBuffer, merge_with_oversampling, observe_task,
                     random_replay_budgeted, select_replay_classes)
from .stream import TaskSpec, TaskStream

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "seed", "task", "overall_acc", "iid_norm_acc", "local_forgetting", "gradient_steps_cum",
    "samples_cum", "replayed_count_cum", "classes_in_task",
)
CONVERGENCE_DELTA = 0.005
CONVERGENCE_EPOCHS = 3
MAX_EPOCHS = 50


# --- data ----------------------------------------------------------------------


def load_datasets(config: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    return _load_datasets(json.dumps(config.to_mapping()["dataset"], sort_keys=True))


@lru_cache(maxsize=8)
def _load_datasets(key: str):
    d = json.loads(key)
    if d["kind"] == "blobs":
        return make_blob_dataset(d["num_classes"], d["samples_per_class"], d["input_dim"],
                                 d["separation"], d["seed"], d["test_per_class"])
    train = load_idx_dataset(d["train_images"], d["train_labels"], d["num_classes"], "train")
    test = load_idx_dataset(d["test_images"], d["test_labels"], d["num_classes"], "test")
    if d["train_subset"]:
        train = train.stratified_subset(d["train_subset"], d["seed"])
    if d["test_subset"]:
        test = test.stratified_subset(d["test_subset"], d["seed"] + 1)
    return train, test


def seed_streams(seed: int):
    """Independent generators for (network init seed, training, replay)."""
    init, train, replay = np.random.SeedSequence(int(seed)).spawn(3)
    return (int(init.generate_state(1)[0]), np.random.default_rng(train),
            np.random.default_rng(replay))


def make_network(config: RunConfig, train: LabeledDataset, init_seed: int) -> Network:
    t = config.train
    return build_network(t.architecture, train.input_dim, config.num_classes, t.width,
                         tuple(t.hidden), train.image_shape, init_seed)


def make_optimizer(config: RunConfig) -> Optimizer:
    t = config.train
    return Optimizer(t.optimizer, t.lr, t.momentum)


# --- IID baseline ----------------------------------------------------------------


def _cache_dir(config: RunConfig) -> Path:
    if config.run.iid_cache:
        return Path(config.run.iid_cache)
    return Path(os.environ.get("CLSTREAM_CACHE", Path.home() / ".cache" / "clstream"))


def iid_cache_key(config: RunConfig, seed: int) -> str:
    m = config.to_mapping()
    payload = {
        "dataset": m["dataset"],
        "architecture": {k: m["train"][k] for k in ("architecture", "hidden", "width")},
        "batch_size": m["train"]["batch_size"],
        "iid": {k: m["run"][k] for k in ("iid_epochs", "iid_optimizer", "iid_lr")},
        "seed": int(seed),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:20]


def run_iid_baseline(config: RunConfig, seed: int | None = None, use_cache: bool = True) -> float:
    """Best test accuracy of the same architecture trained on shuffled full data."""
    seed = config.run.seeds[0] if seed is None else seed
    path = _cache_dir(config) / f"iid_{iid_cache_key(config, seed)}.json"
    if use_cache and path.exists():
        return float(json.loads(path.read_text())["accuracy"])
    train, test = load_datasets(config)
    init_seed, rng, _ = seed_streams(seed)
    net = make_network(config, train, init_seed)
    opt = Optimizer(config.run.iid_optimizer, config.run.iid_lr, config.train.momentum)
    best = 0.0
    for _ in range(config.run.iid_epochs):
        train_arrays(net, opt, train.features, train.labels, 1, config.train.batch_size,
                     False, rng)
        best = max(best, evaluate(net, test)[0])
    if use_cache:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"accuracy": best, "seed": int(seed)}))
    return best


def resolve_iid(config: RunConfig, seed: int) -> float | None:
    mode = config.run.iid
    if mode == "none":
        return None
    if mode == "reuse":
        text = Path(config.run.iid_path).read_text().strip()
        try:
            return float(text)
        except ValueError:
            return float(json.loads(text)["accuracy"])
    return run_iid_baseline(config, seed)


# --- the task loop ---------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    log: MetricsLog
    ledger: ComputeLedger
    class_probs: np.ndarray
    buffer: ReplayBuffer | None = None
    error: str | None = None


class CsvSink:
    """Append-only CSV writer that flushes every row."""

    def __init__(self, prefix, num_classes: int):
        self.prefix = str(prefix)
        Path(self.prefix).parent.mkdir(parents=True, exist_ok=True)
        self.main = open(f"{self.prefix}.csv", "w", newline="")
        self.perclass = open(f"{self.prefix}.perclass.csv", "w", newline="")
        self.probs = open(f"{self.prefix}.classprobs.csv", "w", newline="")
        self.w_main = csv.writer(self.main, lineterminator="\n")
        self.w_perclass = csv.writer(self.perclass, lineterminator="\n")
        self.w_probs = csv.writer(self.probs, lineterminator="\n")
        self.w_main.writerow(CSV_COLUMNS)
        self.w_perclass.writerow(["seed", "task"] + [f"class_{c}" for c in range(num_classes)])
        self.w_probs.writerow(["seed", "classes_per_task"]
                              + [f"class_{c}" for c in range(num_classes)])

    def row(self, seed, record: TaskRecord, iid, forgetting, replayed_cum):
        self.w_main.writerow([
            seed, record.t, _fmt(record.overall_acc),
            _fmt(record.overall_acc / iid) if iid else "",
            "" if forgetting is None else _fmt(forgetting),
            record.gradient_steps, record.cumulative_samples, replayed_cum,
            ";".join(str(c) for c in record.classes),
        ])
        self.w_perclass.writerow([seed, record.t] + [_fmt(a) for a in record.per_class_acc])
        self.main.flush()
        self.perclass.flush()

    def failure(self, seed, t, message):
        clean = " ".join(str(message).split()).replace(",", ";")
        self.w_main.writerow([seed, t, "nan", "", "", "", "", "", f"FAILED: {clean}"])
        self.main.flush()

    def class_probs(self, seed, C, probs):
        self.w_probs.writerow([seed, C] + [_fmt(p) for p in probs])
        self.probs.flush()

    def close(self):
        for f in (self.main, self.perclass, self.probs):
            f.close()


def _fmt(x) -> str:
    return "nan" if x != x else format(float(x), ".10g")


def run_seed(config: RunConfig, seed: int, sink: CsvSink | None = None,
             iid: float | None = None, budget_ratio: float | None = None) -> SeedResult:
    """Run one seed of the scenario; never raises for numerical failures."""
    train, test = load_datasets(config)
    spec = config.scenario_spec(seed)
    stream = TaskStream(spec, train)
    init_seed, train_rng, replay_rng = seed_streams(seed)
    net = make_network(config, train, init_seed)
    opt = make_optimizer(config)
    r = config.replay
    buffer = None
    if r.kind != "none":
        buffer = ReplayBuffer(r.capacity, r.nu_low, r.nu_high, r.tau, r.count_selection)
    ratio = r.budget_ratio if budget_ratio is None else budget_ratio
    ledger = ComputeLedger()
    metrics = MetricsLog(iid_accuracy=iid)
    result = SeedResult(seed, metrics, ledger, stream.distribution.probs.copy(), buffer)
    if sink is not None:
        sink.class_probs(seed, spec.classes_per_task, result.class_probs)
    t_cfg = config.train
    steps = samples = replayed_total = 0
    T = spec.num_tasks
    t = 0
    try:
        for t in range(T):
            task = stream.next_task(t)
            X, y = task_arrays(task, train)
            replayed: list[int] = []
            if r.kind == "frequency":
                replayed = [c for c in select_replay_classes(buffer, task.classes)
                            if c in buffer.stores]
            elif r.kind == "random":
                replayed = random_replay_budgeted(buffer, task.classes, ratio, replay_rng)
            Xm, ym = merge_with_oversampling(X, y, replayed, buffer) if replayed else (X, y)
            stats = train_arrays(net, opt, Xm, ym, t_cfg.epochs, t_cfg.batch_size,
                                 t_cfg.masking, train_rng)
            if buffer is not None:
                observe_task(buffer, X, y, task.classes, replay_rng)
            ledger.record(task.classes, replayed)
            steps += stats.steps
            samples += len(ym) * t_cfg.epochs
            replayed_total += len(replayed)
            if t % config.run.eval_stride == 0 or t == T - 1:
                overall, per_class = evaluate(net, test)
                record = TaskRecord(t, overall, per_class, task.classes, steps,
                                    tuple(replayed), samples)
                metrics.append(record)
                forgetting = None
                if len(metrics) > 1 and metrics.records[-2].t == t - 1:
                    forgetting = local_forgetting(metrics, t, config.num_classes)
                if sink is not None:
                    sink.row(seed, record, iid, forgetting, replayed_total)
    except (ArithmeticError, ValueError) as exc:
        log.warning("seed %s failed at task %s: %s", seed, t, exc)
        result.error = f"{type(exc).__name__}: {exc}"
        if sink is not None:
            sink.failure(seed, t, result.error)
    return result


@dataclass
class RunResult:
    seeds: dict[int, SeedResult] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def logs(self) -> dict[int, MetricsLog]:
        return {s: r.log for s, r in self.seeds.items()}


def run_scenario(config: RunConfig, out: str | None = None) -> RunResult:
    """Run every configured seed, writing ``<out>.csv`` (and siblings) if ``out`` is set."""
    from .metrics import moving_average, total_forgetting

    out = out or config.run.out
    sink = CsvSink(out, config.num_classes) if out else None
    result = RunResult()
    try:
        for seed in config.run.seeds:
            iid = resolve_iid(config, seed)
            res = run_seed(config, seed, sink, iid)
            result.seeds[seed] = res
            entry = {"error": res.error, "iid_accuracy": iid,
                     "compute_overhead": None, "final_accuracy": None}
            if len(res.log):
                entry["final_accuracy"] = float(moving_average(res.log.overall)[-1])
                if res.ledger.base_class_slots:
                    entry["compute_overhead"] = (
                        1 + res.ledger.replayed_class_slots / res.ledger.base_class_slots)
                try:
                    entry["total_forgetting"] = total_forgetting(res.log, config.num_classes)
                except ValueError:
                    entry["total_forgetting"] = None
            result.summary[seed] = entry
    finally:
        if sink is not None:
            sink.close()
    return result


# --- fixed task sequence, trained to convergence ---------------------------------


def train_until_converged(net, opt, X, y, classes, batch_size, masking, rng,
                          max_epochs: int = MAX_EPOCHS) -> tuple[int, bool]:
    """Epochs until train accuracy (over the task's classes) moves less than
    half a point across the last three epochs. Returns (steps, converged)."""
    accs, steps = [], 0
    for _ in range(max_epochs):
        steps += train_arrays(net, opt, X, y, 1, batch_size, masking, rng).steps
        accs.append(accuracy_on(net, X, y, classes))
        recent = accs[-CONVERGENCE_EPOCHS:]
        if len(recent) == CONVERGENCE_EPOCHS and max(recent) - min(recent) < CONVERGENCE_DELTA:
            return steps, True
    return steps, False


def run_fixed_sequence_repeats(config: RunConfig, cycles: int,
                               seed: int | None = None) -> MetricsLog:
    """Repeat the lexicographic sequence of all class pairs ``cycles`` times."""
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    s = config.scenario
    if s.sampler != "structured" or s.flip_p != 0:
        raise ValueError("fixed-sequence repeats need sampler=structured with flip_p=0")
    seed = config.run.seeds[0] if seed is None else seed
    N = config.num_classes
    per_cycle = N * (N - 1) // 2
    cfg = config.replace(**{"scenario.num_tasks": cycles * per_cycle})
    train, test = load_datasets(cfg)
    stream = TaskStream(cfg.scenario_spec(seed), train)
    init_seed, rng, _ = seed_streams(seed)
    net = make_network(cfg, train, init_seed)
    opt = make_optimizer(cfg)
    metrics = MetricsLog()
    metrics.nonconverged = []
    steps = samples = 0
    for task in stream:
        X, y = task_arrays(task, train)
        n, ok = train_until_converged(net, opt, X, y, task.classes, cfg.train.batch_size,
                                      cfg.train.masking, rng)
        if not ok:
            metrics.nonconverged.append(task.t)
        steps += n
        samples += len(y)
        overall, per_class = evaluate(net, test)
        metrics.append(TaskRecord(task.t, overall, per_class, task.classes, steps, (), samples))
    return metrics


# --- task of interest with distractors ---------------------------------------------


@dataclass
class RetentionTrace:
    tasks: list[int] = field(default_factory=list)
    kinds: list[str] = field(default_factory=list)
    zero_shot: list[float] = field(default_factory=list)
    meta_test: list[float] = field(default_factory=list)
    interest: tuple[int, ...] = ()

    def normalized(self, series: str) -> np.ndarray:
        values = np.asarray(getattr(self, series), dtype=np.float64)
        if not values[0] > 0:
            raise ValueError(f"{series} is zero at the first occurrence; cannot normalise")
        return values / values[0]

    def distractors_seen(self) -> np.ndarray:
        return np.cumsum([k == "distractor" for k in self.kinds])

    def index_after_distractors(self, n: int) -> int:
        """Position right after the ``n``-th distractor task was trained."""
        hits = np.flatnonzero((self.distractors_seen() == n)
                              & (np.asarray(self.kinds) == "distractor"))
        if not len(hits):
            raise ValueError(f"trace holds fewer than {n} distractor tasks")
        return int(hits[0])


def run_retention_protocol(config: RunConfig, seed: int | None = None,
                           until_converged: bool = True) -> RetentionTrace:
    """Interest task revisited among permuted distractors, probed after every task.

    Each task is trained until its train accuracy plateaus, or for
    ``train.epochs`` epochs when ``until_converged`` is off.

    Zero-shot accuracy is single-head accuracy on the interest classes' test
    samples; meta-test accuracy comes from a copy fine-tuned one epoch on the
    interest task. Both series are normalised by their first-occurrence value.
    """
    if config.scenario.sampler != "distractor":
        raise ValueError("the retention protocol needs sampler=distractor")
    seed = config.run.seeds[0] if seed is None else seed
    train, test = load_datasets(config)
    stream = TaskStream(config.scenario_spec(seed), train)
    init_seed, rng, probe_rng = seed_streams(seed)
    net = make_network(config, train, init_seed)
    opt = make_optimizer(config)
    t_cfg = config.train
    trace = RetentionTrace()
    interest_task: TaskSpec | None = None
    for task in stream:
        if task.kind == "interest" and interest_task is None:
            interest_task = task
            trace.interest = task.classes
        X, y = task_arrays(task, train)
        if until_converged:
            train_until_converged(net, opt, X, y, task.classes, t_cfg.batch_size,
                                  t_cfg.masking, rng)
        else:
            train_arrays(net, opt, X, y, t_cfg.epochs, t_cfg.batch_size, t_cfg.masking, rng)
        zero_ids = np.concatenate([test.class_index[c] for c in interest_task.classes])
        trace.tasks.append(task.t)
        trace.kinds.append(task.kind)
        trace.zero_shot.append(accuracy_on(net, test.features[zero_ids], test.labels[zero_ids]))
        trace.meta_test.append(meta_test_accuracy(net, opt, interest_task, train, test,
                                                  t_cfg.batch_size, t_cfg.masking, probe_rng))
    return trace


# --- sweeps and reading results back -----------------------------------------------


DEFAULT_SWEEP_LRS = (0.1, 0.01, 0.001)


def sweep(config: RunConfig, lrs=DEFAULT_SWEEP_LRS, seeds=None, out: str | None = None) -> dict[float, RunResult]:
    """Grid over learning rates; each lr writes ``<out>.lr<value>.csv``."""
    out = out or config.run.out
    seeds = config.run.seeds if seeds is None else seeds
    results = {}
    for lr in lrs:
        cfg = config.replace(**{"train.lr": float(lr), "run.seeds": list(seeds)})
        results[float(lr)] = run_scenario(cfg, f"{out}.lr{lr:g}" if out else None)
    return results


@dataclass
class LoadedRun:
    seed: int
    log: MetricsLog
    class_probs: np.ndarray | None
    classes_per_task: int | None
    failed: str | None = None


def _prefix(path) -> str:
    path = str(path)
    return path[:-4] if path.endswith(".csv") else path


def load_run_csv(path) -> dict[int, LoadedRun]:
    """Rebuild per-seed logs from a run CSV and its ``.perclass``/``.classprobs`` siblings."""
    prefix = _prefix(path)
    runs: dict[int, LoadedRun] = {}
    per_class: dict[tuple[int, int], np.ndarray] = {}
    pc_path = Path(f"{prefix}.perclass.csv")
    if pc_path.exists():
        with open(pc_path, newline="") as f:
            for row in list(csv.reader(f))[1:]:
                per_class[(int(row[0]), int(row[1]))] = np.array([float(v) for v in row[2:]])
    probs: dict[int, tuple[int, np.ndarray]] = {}
    cp_path = Path(f"{prefix}.classprobs.csv")
    if cp_path.exists():
        with open(cp_path, newline="") as f:
            for row in list(csv.reader(f))[1:]:
                probs[int(row[0])] = (int(row[1]), np.array([float(v) for v in row[2:]]))
    with open(f"{prefix}.csv", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{prefix}.csv does not have the run CSV header")
        for row in reader:
            seed, t = int(row["seed"]), int(row["task"])
            C, p = probs.get(seed, (None, None))
            run = runs.setdefault(seed, LoadedRun(seed, MetricsLog(), p, C))
            if row["classes_in_task"].startswith("FAILED"):
                run.failed = row["classes_in_task"]
                continue
            acc = float(row["overall_acc"])
            if row["iid_norm_acc"]:
                run.log.iid_accuracy = acc / float(row["iid_norm_acc"])
            classes = tuple(int(c) for c in row["classes_in_task"].split(";") if c)
            pc = per_class.get((seed, t))
            if pc is None:
                pc = np.full(len(p) if p is not None else 0, np.nan)
            run.log.append(TaskRecord(t, acc, pc, classes, int(row["gradient_steps_cum"]),
                                      (), int(row["samples_cum"])))
    return runs
