"""Run configuration: dotted ``key = value`` text files or a JSON mirror.

Example::

    dataset.kind = blobs
    dataset.num_classes = 10
    scenario.classes_per_task = 2
    scenario.num_tasks = 300
    train.lr = 0.01
    replay.kind = frequency
    run.seeds = [0, 1, 2]
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .learner import WIDTHS
from .stream import SAMPLERS, ScenarioSpec


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    kind: str = "blobs"
    num_classes: int = 10
    samples_per_class: int = 200
    test_per_class: int = 100
    input_dim: int = 32
    separation: float = 4.0
    seed: int = 0
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_subset: int | None = None
    test_subset: int | None = None


@dataclass
class ScenarioConfig:
    classes_per_task: int = 2
    num_tasks: int = 100
    sampler: str = "uniform"
    entropy_decrease: float = 0.0
    flip_p: float = 0.0
    pairs_fraction: float = 1.0
    interest_classes: list | None = None
    revisit_period: int | None = None
    evolution: str = "none"
    gamma: float = 1.0
    window: int = 10
    cycle: int = 100
    shift_task: int = 0
    kept_classes: list | None = None
    first_classes: list | None = None
    second_classes: list | None = None
    transform: str = "identity"
    noise_sigma: float = 0.1


@dataclass
class TrainConfig:
    architecture: str = "mlp"
    hidden: list = field(default_factory=lambda: [50])
    width: int = 1
    optimizer: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.9
    masking: bool = True
    epochs: int = 1
    batch_size: int = 64


@dataclass
class ReplayConfig:
    kind: str = "none"
    nu_low: float = 0.01
    nu_high: float = 0.1
    tau: int = 3
    capacity: int = 200
    budget_ratio: float = 0.2128
    count_selection: bool = True


@dataclass
class RunSection:
    seeds: list = field(default_factory=lambda: [0])
    eval_stride: int = 1
    out: str | None = None
    iid: str = "run"
    iid_path: str | None = None
    iid_epochs: int = 20
    iid_optimizer: str = "adam"
    iid_lr: float = 0.001
    iid_cache: str | None = None


SECTIONS = {
    "dataset": DatasetConfig,
    "scenario": ScenarioConfig,
    "train": TrainConfig,
    "replay": ReplayConfig,
    "run": RunSection,
}


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    run: RunSection = field(default_factory=RunSection)

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        """Build from nested sections or flat dotted keys; unknown keys are errors."""
        flat = {}
        for key, value in data.items():
            if isinstance(value, dict) and key in SECTIONS:
                for sub, v in value.items():
                    flat[f"{key}.{sub}"] = v
            else:
                flat[key] = value
        sections = {name: {} for name in SECTIONS}
        for key, value in flat.items():
            section, _, name = key.partition(".")
            if section not in SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            known = {f.name: f for f in dataclasses.fields(SECTIONS[section])}
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            sections[section][name] = _coerce(key, known[name], value)
        config = cls(**{name: SECTIONS[name](**kw) for name, kw in sections.items()})
        config.validate()
        return config

    def to_mapping(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def replace(self, **dotted) -> "RunConfig":
        data = self.to_mapping()
        for key, value in dotted.items():
            section, _, name = key.replace("__", ".").partition(".")
            data[section][name] = value
        return RunConfig.from_mapping(data)

    @property
    def num_classes(self) -> int:
        return self.dataset.num_classes

    def scenario_spec(self, seed: int) -> ScenarioSpec:
        s = self.scenario
        tup = lambda v: None if v is None else tuple(int(c) for c in v)  # noqa: E731
        return ScenarioSpec(
            num_classes=self.dataset.num_classes, classes_per_task=s.classes_per_task,
            num_tasks=s.num_tasks, sampler=s.sampler, entropy_decrease=s.entropy_decrease,
            flip_p=s.flip_p, pairs_fraction=s.pairs_fraction,
            interest_classes=tup(s.interest_classes), revisit_period=s.revisit_period,
            evolution=s.evolution, gamma=s.gamma, window=s.window, cycle=s.cycle,
            shift_task=s.shift_task, kept_classes=tup(s.kept_classes),
            first_classes=tup(s.first_classes), second_classes=tup(s.second_classes),
            transform=s.transform, noise_sigma=s.noise_sigma, seed=int(seed),
        )

    def validate(self) -> None:
        d, t, r, run = self.dataset, self.train, self.replay, self.run
        checks = [
            (d.kind in ("blobs", "idx"), "dataset.kind must be blobs or idx"),
            (d.num_classes >= 2, "dataset.num_classes must be >= 2"),
            (d.kind != "blobs" or (d.samples_per_class >= 1 and d.test_per_class >= 1
                                   and d.input_dim >= 1 and d.separation > 0),
             "blob sizes must be positive"),
            (d.kind != "idx" or all((d.train_images, d.train_labels, d.test_images,
                                     d.test_labels)), "idx datasets need all four paths"),
            (self.scenario.sampler in SAMPLERS, f"scenario.sampler must be one of {SAMPLERS}"),
            (t.architecture in ("mlp", "cnn"), "train.architecture must be mlp or cnn"),
            (t.width in WIDTHS, f"train.width must be one of {WIDTHS}"),
            (t.optimizer in ("sgd", "sgd_momentum", "adam"), "unknown train.optimizer"),
            (t.lr > 0, "train.lr must be positive"),
            (0 <= t.momentum < 1, "train.momentum must lie in [0, 1)"),
            (t.epochs >= 0, "train.epochs must be >= 0"),
            (t.batch_size >= 1, "train.batch_size must be >= 1"),
            (r.kind in ("none", "frequency", "random"), "replay.kind must be none|frequency|random"),
            (0 <= r.nu_low <= r.nu_high <= 1, "need 0 <= replay.nu_low <= replay.nu_high <= 1"),
            (r.tau >= 0, "replay.tau must be >= 0"),
            (r.capacity >= 1, "replay.capacity must be >= 1"),
            (r.budget_ratio >= 0, "replay.budget_ratio must be >= 0"),
            (len(run.seeds) >= 1, "run.seeds must not be empty"),
            (len(set(run.seeds)) == len(run.seeds), "run.seeds must be distinct"),
            (run.eval_stride >= 1, "run.eval_stride must be >= 1"),
            (run.iid in ("run", "reuse", "none"), "run.iid must be run|reuse|none"),
            (run.iid != "reuse" or run.iid_path, "run.iid = reuse needs run.iid_path"),
            (run.iid_epochs >= 1, "run.iid_epochs must be >= 1"),
            (run.iid_optimizer in ("sgd", "sgd_momentum", "adam"), "unknown run.iid_optimizer"),
            (run.iid_lr > 0, "run.iid_lr must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        try:
            for seed in run.seeds:
                self.scenario_spec(seed)
        except ValueError as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    return text.strip("\"'")


def _coerce(key, f: dataclasses.Field, value):
    kind = str(f.type)
    # bare "none" is a real value for some string options, and empty only for optional ones
    if isinstance(value, str) and value.lower() in ("none", "null") and "None" in kind:
        value = None
    if value is None:
        if "None" not in kind:
            raise ConfigError(f"{key} cannot be empty")
        return None
    try:
        if kind.startswith("bool"):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind.startswith("int"):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if kind.startswith("float"):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind.startswith("list"):
            if isinstance(value, (int, float)):
                value = [value]
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return list(value)
        if kind.startswith("str"):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot use {value!r} as {kind}") from None
    return value


def parse_config_text(text: str) -> dict:
    data = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in data:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        data[key] = _parse_value(value)
    return data


def load_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return RunConfig.from_mapping(json.loads(text))
    return RunConfig.from_mapping(parse_config_text(text))


def dump_config(config: RunConfig) -> str:
    lines = []
    for section, values in config.to_mapping().items():
        for name, value in values.items():
            lines.append(f"{section}.{name} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"
