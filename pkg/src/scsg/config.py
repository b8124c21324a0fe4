"""Experiment configuration: a single JSON document, schema-validated.

See ``docs/config.md`` for the field reference.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import jsonschema

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_CONST = {"oneOf": [{"type": "number", "minimum": 0}, {"enum": ["exact", "estimate"]}]}

PROBLEM_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["least_squares", "logistic", "mlp", "streaming_least_squares"]},
        "n": _POS_INT,
        "d": _POS_INT,
        "condition": {"type": "number", "minimum": 1},
        "noise": {"type": "number", "minimum": 0},
        "lambda": {"type": "number", "exclusiveMinimum": 0},
        "input_dim": _POS_INT,
        "hidden_dim": _POS_INT,
        "holdout": _POS_INT,
        "data_seed": {"type": "integer", "minimum": 0},
    },
}

METHOD_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "kind"],
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "kind": {"enum": ["scsg", "sgd", "svrg"]},
        "version": {"enum": ["v1", "v2", "v3", "custom"]},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "L": _CONST,
        "h_star": _CONST,
        "mu": _CONST,
        "gamma": {"type": "number", "exclusiveMinimum": 0},
        "log_mu": {"type": "number", "exclusiveMinimum": 0},
        "batch": _POS_INT,
        "minibatch": _POS_INT,
        "minibatch_divisor": _POS_INT,
        "stepsize": {"type": "number", "exclusiveMinimum": 0},
        "stepsize_over_L": {"type": "number", "exclusiveMinimum": 0},
        "inner_mode": {"enum": ["geometric", "epoch_pass"]},
        "output_rule": {"enum": ["smooth_sample", "last_iterate"]},
        "replacement": {"enum": ["finite", "streaming"]},
        "literal": {"type": "boolean"},
        "n_cap": {"type": "integer", "minimum": 0},
        "thin": _POS_INT,
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem", "methods", "budget", "seeds"],
    "properties": {
        "name": {"type": "string"},
        "problem": PROBLEM_SCHEMA,
        "methods": {"type": "array", "minItems": 1, "items": METHOD_SCHEMA},
        "budget": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": {
                "passes": {"type": "number", "exclusiveMinimum": 0},
                "ifo": _POS_INT,
                "epochs": _POS_INT,
            },
        },
        "seeds": {
            "oneOf": [
                {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["count"],
                    "properties": {"count": _POS_INT, "start": {"type": "integer", "minimum": 0}},
                },
            ]
        },
        "out_dir": {"type": "string"},
    },
}


class ConfigError(ValueError):
    """Invalid experiment or constants file; the message names the offending field."""


def _compact(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


@dataclass
class ProblemSpec:
    kind: str
    n: int | None = None
    d: int | None = None
    condition: float | None = None
    noise: float | None = None
    lam: float | None = None
    input_dim: int | None = None
    hidden_dim: int | None = None
    holdout: int | None = None
    data_seed: int | None = None

    @property
    def seed(self) -> int:
        # omitted data_seed means 0; kept as None so the config round-trips unchanged
        return 0 if self.data_seed is None else self.data_seed

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)

    def to_dict(self) -> dict:
        out = _compact(asdict(self))
        if "lam" in out:
            out["lambda"] = out.pop("lam")
        return out


@dataclass
class MethodSpec:
    name: str
    kind: str
    version: str | None = None
    epsilon: float | None = None
    L: Any = None
    h_star: Any = None
    mu: Any = None
    gamma: float | None = None
    log_mu: float | None = None
    batch: int | None = None
    minibatch: int | None = None
    minibatch_divisor: int | None = None
    stepsize: float | None = None
    stepsize_over_L: float | None = None
    inner_mode: str | None = None
    output_rule: str | None = None
    replacement: str | None = None
    literal: bool | None = None
    n_cap: int | None = None
    thin: int | None = None

    def to_dict(self) -> dict:
        return _compact(asdict(self))


@dataclass
class ExperimentConfig:
    problem: ProblemSpec
    methods: list[MethodSpec]
    budget: dict
    seeds: list[int]
    name: str | None = None
    out_dir: str | None = None
    seed_spec: Any = field(default=None, repr=False)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        validate(raw)
        seeds = raw["seeds"]
        if isinstance(seeds, dict):
            start = seeds.get("start", 0)
            seed_list = list(range(start, start + seeds["count"]))
        else:
            seed_list = list(seeds)
        methods = [MethodSpec(**m) for m in raw["methods"]]
        names = [m.name for m in methods]
        if len(set(names)) != len(names):
            raise ConfigError("methods: method names must be unique")
        for i, m in enumerate(methods):
            _check_method(i, m)
        cfg = cls(problem=ProblemSpec.from_dict(raw["problem"]), methods=methods, budget=dict(raw["budget"]),
                  seeds=seed_list, name=raw.get("name"), out_dir=raw.get("out_dir"), seed_spec=seeds)
        _check_problem(cfg.problem)
        if cfg.problem.kind == "streaming_least_squares" and "passes" in cfg.budget:
            raise ConfigError("budget.passes: a streaming problem has no data passes; use budget.ifo")
        return cfg

    def to_dict(self) -> dict:
        out = {
            "problem": self.problem.to_dict(),
            "methods": [m.to_dict() for m in self.methods],
            "budget": dict(self.budget),
            "seeds": self.seed_spec if self.seed_spec is not None else list(self.seeds),
        }
        if self.name is not None:
            out["name"] = self.name
        if self.out_dir is not None:
            out["out_dir"] = self.out_dir
        return out

    def with_seed_count(self, count: int) -> "ExperimentConfig":
        start = self.seeds[0] if self.seeds else 0
        spec = {"count": count, "start": start}
        return ExperimentConfig(self.problem, self.methods, self.budget, list(range(start, start + count)),
                                self.name, self.out_dir, spec)

    def ifo_budget(self, n: int | None) -> int | None:
        if "ifo" in self.budget:
            return int(self.budget["ifo"])
        if "passes" in self.budget:
            return int(round(self.budget["passes"] * n))
        return None


def _check_problem(p: ProblemSpec) -> None:
    need = {
        "least_squares": ("n", "d"),
        "logistic": ("n", "d"),
        "mlp": ("n", "input_dim", "hidden_dim"),
        "streaming_least_squares": ("d",),
    }[p.kind]
    missing = [k for k in need if getattr(p, k) is None]
    if missing:
        raise ConfigError(f"problem: kind {p.kind!r} requires {', '.join(missing)}")


def _check_method(i: int, m: MethodSpec) -> None:
    where = f"methods[{i}] ({m.name})"
    if m.kind == "sgd":
        if m.batch is None:
            raise ConfigError(f"{where}: sgd requires batch")
        if (m.stepsize is None) == (m.stepsize_over_L is None):
            raise ConfigError(f"{where}: give exactly one of stepsize, stepsize_over_L")
    elif m.kind == "svrg":
        pass
    else:
        version = m.version or "custom"
        if version in ("v1", "v3") and m.epsilon is None:
            raise ConfigError(f"{where}: version {version} requires epsilon")
        if version == "custom":
            if m.batch is None:
                raise ConfigError(f"{where}: custom schedule requires batch")
            if m.stepsize is None and m.stepsize_over_L is None:
                raise ConfigError(f"{where}: custom schedule requires stepsize or stepsize_over_L")
        if m.stepsize is not None and m.stepsize_over_L is not None:
            raise ConfigError(f"{where}: give at most one of stepsize, stepsize_over_L")
        if m.minibatch is not None and m.minibatch_divisor is not None:
            raise ConfigError(f"{where}: give at most one of minibatch, minibatch_divisor")


def validate(raw: Any) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            path = ".".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{path}: {e.message}")
        raise ConfigError("; ".join(lines))


def load_config(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return ExperimentConfig.from_dict(raw)


METHOD_FIELDS = tuple(f.name for f in fields(MethodSpec))
