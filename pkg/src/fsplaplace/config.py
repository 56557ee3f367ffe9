"""Experiment configuration files.

A config is an INI-style file with fixed sections. Every key is optional and
falls back to a task-dependent default; unknown sections or keys are
rejected with the offending line number. Example::

    [experiment]
    task = sine-regression
    seed = 0

    [prior]
    kernel = rbf(l=0.3, var=1.0)
    select = lml-grid

    [train]
    sampler = uniform(lower=-4, upper=4)

Kernel expressions follow :mod:`fsplaplace.kernels`; sampler expressions are
``uniform(lower=, upper=)``, ``grid(lower=, upper=[, counts=])``,
``halton(lower=, upper=[, skip=])`` or ``dataset()``. List-valued keys are
comma separated, except ``ablation.kernels`` which separates kernel
expressions with ``;``.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

TASKS = ("sine-regression", "two-moons", "prior-ablation", "context-ablation", "oracle-blr")


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _words(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _exprs(text):
    return [t.strip() for t in text.split(";") if t.strip()]


SCHEMA = {
    "experiment": {"task": str, "seed": int, "out": str},
    "data": {"n_train": int, "n_val": int, "n_test": int, "noise": float},
    "model": {"hidden": _ints, "activation": str},
    "prior": {"kernel": str, "mean": float, "select": str, "grid_var": _floats, "grid_l": _floats},
    "likelihood": {"noise": float, "learn_noise": _bool},
    "train": {
        "batch_size": int, "context_count": int, "learning_rate": float, "max_epochs": int,
        "patience": int, "eval_every": int, "jitter": float, "sampler": str,
    },
    "laplace": {
        "sampler": str, "context_count": int, "max_rank": int, "eps_rel": float, "tol": float,
        "bound_tol": float,
    },
    "baselines": {"methods": _words, "prior_scale": float, "learning_rate": float, "steps": int},
    "output": {"lower": _floats, "upper": _floats, "count": int, "n_samples": int, "n_mc": int},
    "ablation": {"context_counts": _ints, "kernels": _exprs},
    "oracle": {"n_features": int, "n_train": int, "n_query": int, "n_context": int},
}

_COMMON = {
    "experiment": {"task": "sine-regression", "seed": 0, "out": "runs/experiment"},
    "likelihood": {"learn_noise": False},
    "train": {"patience": 50, "eval_every": 0, "jitter": 1e-8},
    "laplace": {"max_rank": 500, "eps_rel": 1e-10, "tol": 1e-12, "bound_tol": 1e-9},
    "baselines": {"prior_scale": 1.0},
    "prior": {"mean": 0.0, "select": "none", "grid_var": [0.1, 0.3, 1.0, 3.0, 10.0],
              "grid_l": [0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0]},
    "model": {"activation": "tanh"},
    "ablation": {"context_counts": [3, 5, 25, 100], "kernels": ["rbf(l=0.3)", "matern12(l=0.3)"]},
    "oracle": {"n_features": 4, "n_train": 15, "n_query": 10, "n_context": 12},
}

_REGRESSION = {
    "data": {"n_train": 100, "n_val": 0, "n_test": 200, "noise": 0.1},
    "model": {"hidden": [50, 50]},
    "prior": {"kernel": "rbf(l=0.3)", "select": "lml-grid"},
    "likelihood": {"noise": 0.1},
    "train": {"batch_size": 100, "context_count": 100, "learning_rate": 1e-2, "max_epochs": 10000,
              "sampler": "uniform(lower=-4, upper=4)"},
    "laplace": {"sampler": "grid(lower=-4, upper=4)", "context_count": 100},
    "baselines": {"methods": ["map", "laplace", "gp"], "learning_rate": 1e-2, "steps": 5000},
    "output": {"lower": [-4.0], "upper": [4.0], "count": 201, "n_samples": 10, "n_mc": 10},
}

_CLASSIFICATION = {
    "data": {"n_train": 200, "n_val": 0, "n_test": 500, "noise": 0.1},
    "model": {"hidden": [50, 50]},
    "prior": {"kernel": "rbf(l=1.0, var=4.0)", "select": "none"},
    "likelihood": {"noise": 0.1},
    "train": {"batch_size": 200, "context_count": 100, "learning_rate": 1e-2, "max_epochs": 3000,
              "sampler": "uniform(lower=-3.75, upper=3.75)"},
    "laplace": {"sampler": "grid(lower=-3.75, upper=3.75)", "context_count": 100},
    "baselines": {"methods": ["map", "laplace"], "learning_rate": 1e-2, "steps": 3000},
    "output": {"lower": [-4.0, -4.0], "upper": [4.0, 4.0], "count": 41, "n_samples": 100, "n_mc": 10},
}


def _merge(*layers):
    out = {s: {} for s in SCHEMA}
    for layer in layers:
        for s, kv in layer.items():
            out[s].update(kv)
    return out


def task_defaults(task: str) -> dict:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    base = _CLASSIFICATION if task == "two-moons" else _REGRESSION
    layers = [_COMMON, base]
    if task == "context-ablation":
        layers.append({
            "train": {"max_epochs": 5000},
            "laplace": {"sampler": "halton(lower=-4, upper=4)"},
            "baselines": {"methods": []},
        })
    if task == "prior-ablation":
        layers.append({"prior": {"select": "none"}, "baselines": {"methods": []}})
    if task == "oracle-blr":
        layers.append({"baselines": {"methods": ["laplace"]}, "prior": {"select": "none"}})
    return _merge(*layers)


@dataclass
class ExperimentConfig:
    sections: dict
    text: str = ""
    source: str = "<string>"
    overrides: dict = field(default_factory=dict)

    @property
    def task(self) -> str:
        return self.sections["experiment"]["task"]

    @property
    def seed(self) -> int:
        return self.sections["experiment"]["seed"]

    @property
    def out(self) -> str:
        return self.sections["experiment"]["out"]

    def __getitem__(self, section):
        return self.sections[section]

    def with_overrides(self, seed=None, out=None) -> "ExperimentConfig":
        secs = {s: dict(kv) for s, kv in self.sections.items()}
        ov = dict(self.overrides)
        if seed is not None:
            secs["experiment"]["seed"] = int(seed)
            ov["seed"] = int(seed)
        if out is not None:
            secs["experiment"]["out"] = str(out)
            ov["out"] = str(out)
        return ExperimentConfig(secs, self.text, self.source, ov)


def _line_of(text, section, key=None):
    """1-based line of ``[section]`` or of ``key`` inside it; 0 when unknown."""
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section:
            m = re.match(r"([^=:#;]+?)\s*[=:]", s)
            if m and m.group(1).strip().lower() == key.lower():
                return i
    return 0


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",), strict=True)
    try:
        cp.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: key outside of any [section]") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0] if exc.errors else (0, "")
        raise ConfigError(f"{source}:{lineno}: cannot parse line {line.strip()!r}") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]") from None

    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{_line_of(text, section)}: unknown section [{section}]")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}:{_line_of(text, section, key)}: unknown key {key!r} in [{section}]")

    task = cp.get("experiment", "task", fallback="sine-regression").strip()
    try:
        sections = task_defaults(task)
    except ConfigError as exc:
        raise ConfigError(f"{source}:{_line_of(text, 'experiment', 'task')}: {exc}") from None
    for section in cp.sections():
        for key, raw in cp[section].items():
            conv = SCHEMA[section][key]
            try:
                sections[section][key] = conv(raw.strip()) if conv is not str else raw.strip()
            except ValueError as exc:
                raise ConfigError(f"{source}:{_line_of(text, section, key)}: bad value for {section}.{key}: {exc}") from None
    return ExperimentConfig(sections, text, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
