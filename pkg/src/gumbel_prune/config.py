"""Experiment configuration files (YAML; JSON is accepted as a subset).

Example::

    task:
      kind: synthetic          # synthetic | mnist | csv
      scenario: independence
      n: 4000
      test_fraction: 0.25
    network:
      hidden: [8, 8]
      init_retain_prob: 0.9
    train:
      alpha: 10
      d_target: 0.15
      epochs: 50
      gate_optimizer: sgd      # optional; defaults to train.optimizer
      gate_learning_rate: 1.0
    mode: gumbel               # gumbel | random
    seeds: [0, 1, 2]
    output: runs/independence
    exports: {dot: true, importance: true, symmetry: true}

Validation errors carry the line of the offending key.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import COLUMN_KINDS, SCENARIOS, find_mnist
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path:
            where = f"{path}:{line}: " if line else f"{path}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)


TASK_KINDS = ("synthetic", "mnist", "csv")
MODES = ("gumbel", "random")
EXPORTS = ("dot", "heatmap", "importance", "report", "symmetry")


@dataclass
class ExperimentConfig:
    task: dict
    layer_sizes: list[int]
    train: TrainConfig
    init_retain_prob: float = 0.5
    mode: str = "gumbel"
    baseline_density: float | None = None
    seeds: list[int] = field(default_factory=list)
    output: str = "runs/default"
    exports: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def to_dict(self) -> dict:
        """Normalised, JSON-safe view used for hashing and echoing."""
        return {
            "task": self.task,
            "layer_sizes": list(self.layer_sizes),
            "train": self.train.to_dict(),
            "init_retain_prob": self.init_retain_prob,
            "mode": self.mode,
            "baseline_density": self.baseline_density,
            "seeds": list(self.seeds),
            "exports": dict(self.exports),
        }

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path


class _Lines:
    """Map key paths to 1-based source lines using the YAML node tree."""

    def __init__(self, text: str):
        try:
            self.root = yaml.compose(text)
        except yaml.YAMLError:
            self.root = None

    def line(self, *keys) -> int | None:
        node, best = self.root, None
        for key in keys:
            if not isinstance(node, yaml.MappingNode):
                break
            for k, v in node.value:
                if k.value == key:
                    best = k.start_mark.line + 1
                    node = v
                    break
            else:
                break
        return best


def _task_width(task: dict, base: Path) -> tuple[int | None, int | None]:
    kind = task["kind"]
    if kind == "synthetic":
        p, rules = SCENARIOS[task["scenario"]]
        return p, len(rules)
    if kind == "mnist":
        return 784, 10
    return None, None


def parse_config(raw: dict, text: str = "", path: str | None = None, base_dir: Path = Path(".")) -> ExperimentConfig:
    lines = _Lines(text)

    def fail(msg, *keys):
        raise ConfigError(msg, lines.line(*keys) if keys else None, path)

    def missing(msg, *keys):
        # a referenced file is absent: an I/O problem, reported with its line
        raise FileNotFoundError(str(ConfigError(msg, lines.line(*keys), path)))

    if not isinstance(raw, dict):
        fail("top level must be a mapping")
    known = {"task", "network", "train", "mode", "baseline_density", "seeds", "output", "exports"}
    for key in raw:
        if key not in known:
            fail(f"unknown key {key!r}", key)

    task = dict(raw.get("task") or {})
    kind = task.get("kind")
    if kind not in TASK_KINDS:
        fail(f"task.kind must be one of {TASK_KINDS}, got {kind!r}", "task", "kind")
    if kind == "synthetic":
        task.setdefault("scenario", "independence")
        task.setdefault("n", 2000)
        task.setdefault("noise_std", 0.0)
        task.setdefault("data_seed", 0)
        if task["scenario"] not in SCENARIOS:
            fail(f"unknown scenario {task['scenario']!r}", "task", "scenario")
        if not isinstance(task["n"], int) or task["n"] < 2:
            fail("task.n must be an integer >= 2", "task", "n")
    elif kind == "mnist":
        d = task.get("dir")
        if not d:
            fail("task.dir is required for mnist", "task")
        if find_mnist(base_dir / d if not Path(d).is_absolute() else d) is None:
            missing(f"MNIST IDX files not found in {d}", "task", "dir")
    else:
        for req in ("path", "schema"):
            if req not in task:
                fail(f"task.{req} is required for csv", "task")
        if not (base_dir / task["path"]).exists() and not Path(task["path"]).exists():
            missing(f"CSV file {task['path']} does not exist", "task", "path")
        if "test_path" in task and not (base_dir / task["test_path"]).exists() and not Path(task["test_path"]).exists():
            missing(f"CSV file {task['test_path']} does not exist", "task", "test_path")
        schema = task["schema"]
        if not isinstance(schema, dict):
            fail("task.schema must map column -> kind", "task", "schema")
        for col, k in schema.items():
            if k not in COLUMN_KINDS:
                fail(f"column {col!r}: kind must be one of {COLUMN_KINDS}", "task", "schema", col)
    tf = task.setdefault("test_fraction", 0.25)
    if "test_path" not in task and not 0 < tf < 1:
        fail("task.test_fraction must lie in (0, 1)", "task", "test_fraction")
    task.setdefault("split_seed", 0)

    train_raw = dict(raw.get("train") or {})
    if "loss_kind" not in train_raw:
        train_raw["loss_kind"] = "sigmoid_bce" if kind == "synthetic" else "softmax_xent"
    allowed = {f.name for f in dataclasses.fields(TrainConfig)}
    for key in train_raw:
        if key not in allowed:
            fail(f"unknown train option {key!r}", "train", key)
    try:
        train = TrainConfig(**train_raw)
    except (TypeError, ValueError) as exc:
        fail(f"invalid train section: {exc}", "train")

    net = dict(raw.get("network") or {})
    width, n_out = _task_width(task, base_dir)
    if "layers" in net:
        sizes = [int(s) for s in net["layers"]]
    else:
        hidden = [int(h) for h in net.get("hidden", [])]
        if width is None:
            # csv widths are only known after reading the file; filled in later
            sizes = [0, *hidden, 0]
        else:
            if train.loss_kind == "softmax_xent" and kind == "synthetic":
                fail("synthetic tasks use independent binary labels; use loss_kind sigmoid_bce", "train", "loss_kind")
            sizes = [width, *hidden, n_out]
    if any(s < 0 for s in sizes) or len(sizes) < 2:
        fail("network sizes must be positive and include input and output", "network")
    if width is not None and (sizes[0] != width or sizes[-1] != n_out):
        fail(f"network must map {width} inputs to {n_out} outputs for this task, got {sizes}", "network")
    irp = float(net.get("init_retain_prob", 0.5))
    if not 0 < irp < 1:
        fail("init_retain_prob must lie in (0, 1)", "network", "init_retain_prob")

    mode = raw.get("mode", "gumbel")
    if mode not in MODES:
        fail(f"mode must be one of {MODES}", "mode")
    bd = raw.get("baseline_density")
    if mode == "random":
        bd = train.d_target if bd is None else float(bd)
        if not 0 < bd <= 1:
            fail("baseline_density must lie in (0, 1]", "baseline_density")

    seeds = raw.get("seeds", [train.seed])
    if not isinstance(seeds, list) or not all(isinstance(s, int) and s >= 0 for s in seeds):
        fail("seeds must be a list of nonnegative integers", "seeds")

    exports = {k: True for k in ("report",)}
    for k, v in (raw.get("exports") or {}).items():
        if k not in EXPORTS:
            fail(f"unknown export {k!r}", "exports", k)
        exports[k] = bool(v)

    return ExperimentConfig(
        task=task, layer_sizes=sizes, train=train, init_retain_prob=irp, mode=mode,
        baseline_density=bd, seeds=seeds, output=str(raw.get("output", "runs/default")),
        exports=exports, raw=raw, base_dir=base_dir,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, str(path)) from exc
    return parse_config(raw, text, str(path), path.parent)
