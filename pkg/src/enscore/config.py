"""Experiment configuration files (YAML) with line-anchored validation errors."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .diffusion import ForwardKind
from .estimator import NodeMode
from .registry import BASELINES, TARGETS
from .sampler import EstimatorKind, Integrator


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = f"{path}:{line}: " if path and line else (f"line {line}: " if line else "")
        super().__init__(where + message)
        self.line = line


def _to_python(node, lines: dict, prefix: str = ""):
    """Convert a composed YAML node to plain Python, recording each key's line."""
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            dotted = f"{prefix}.{key}" if prefix else key
            if key in out:
                raise ConfigError(f"duplicate key '{dotted}'", k.start_mark.line + 1)
            lines[dotted] = k.start_mark.line + 1
            out[key] = _to_python(v, lines, dotted)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, lines, prefix) for v in node.value]
    return yaml.safe_load(yaml.serialize(node))


@dataclass
class TargetBlock:
    name: str
    params: dict = field(default_factory=dict)


@dataclass
class ForwardBlock:
    kind: str = ForwardKind.ZERO_DRIFT.value
    sigma_min: float = 0.01
    sigma_max: float = 10.0
    p: float = 5.0
    theta: float = 0.1
    alpha: float = 1.0
    mu: Any = 0.0


@dataclass
class SamplerBlock:
    n_ens: int = 1000
    n_resample: int = 10
    dt_init: float = 0.005
    integrator: str = Integrator.REVERSE_SDE.value
    estimator_kind: str = EstimatorKind.GAUSSIAN.value
    antithetic: bool = False
    node_mode: str = NodeMode.REUSE_ENSEMBLE.value
    pool_total: int | None = None


@dataclass
class BaselineBlock:
    method: str = "mala"
    n_chains: int = 4
    n_steps: int = 10_000
    burn_in: int = 1_000
    step_size: float = 0.5
    n_samples: int | None = None


@dataclass
class EvalBlock:
    p_norm: float = 1.0
    n_repeats: int = 200
    n_reference: int | None = None


@dataclass
class ExperimentConfig:
    target: TargetBlock
    seed: int
    forward: ForwardBlock = field(default_factory=ForwardBlock)
    sampler: SamplerBlock = field(default_factory=SamplerBlock)
    baseline: BaselineBlock | None = None
    eval: EvalBlock = field(default_factory=EvalBlock)
    output: str = "runs/out"
    name: str = "experiment"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict, lines: dict | None = None, path: str | None = None) -> "ExperimentConfig":
        return _validate(copy.deepcopy(raw), lines or {}, path)


_SECTIONS = {
    "forward": ForwardBlock,
    "sampler": SamplerBlock,
    "baseline": BaselineBlock,
    "eval": EvalBlock,
}
_ENUMS = {
    "forward.kind": ForwardKind,
    "sampler.integrator": Integrator,
    "sampler.estimator_kind": EstimatorKind,
    "sampler.node_mode": NodeMode,
}


def _build_section(cls, raw, key: str, lines: dict, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{key}' must be a mapping", lines.get(key), path)
    known = {f.name: f for f in fields(cls)}
    for k in raw:
        if k not in known:
            raise ConfigError(f"unknown key '{key}.{k}'", lines.get(f"{key}.{k}"), path)
    for k, v in raw.items():
        dotted = f"{key}.{k}"
        if dotted in _ENUMS:
            allowed = [e.value for e in _ENUMS[dotted]]
            if v not in allowed:
                raise ConfigError(f"'{dotted}' must be one of {allowed}, got {v!r}", lines.get(dotted), path)
        default = getattr(cls(), k) if cls is not TargetBlock else None
        if isinstance(default, bool) and not isinstance(v, bool):
            raise ConfigError(f"'{dotted}' must be true/false", lines.get(dotted), path)
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"'{dotted}' must be a number, got {v!r}", lines.get(dotted), path)
            if isinstance(default, int) and v != int(v):
                raise ConfigError(f"'{dotted}' must be an integer, got {v!r}", lines.get(dotted), path)
            raw[k] = type(default)(v)
    return cls(**raw)


def _validate(raw: dict, lines: dict, path) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at top level", 1, path)
    allowed = {"target", "seed", "output", "name", *_SECTIONS}
    for k in raw:
        if k not in allowed:
            raise ConfigError(f"unknown key '{k}'", lines.get(k), path)
    if "seed" not in raw:
        raise ConfigError("missing required key 'seed'", None, path)
    if not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool):
        raise ConfigError("'seed' must be an integer", lines.get("seed"), path)
    if "target" not in raw:
        raise ConfigError("missing required key 'target'", None, path)

    tgt = raw["target"]
    if not isinstance(tgt, dict):
        raise ConfigError("section 'target' must be a mapping", lines.get("target"), path)
    for k in tgt:
        if k not in ("name", "params"):
            raise ConfigError(f"unknown key 'target.{k}'", lines.get(f"target.{k}"), path)
    if "name" not in tgt:
        raise ConfigError("missing required key 'target.name'", lines.get("target"), path)
    if tgt["name"] not in TARGETS:
        raise ConfigError(
            f"unknown target '{tgt['name']}' (key 'target.name'); known: {sorted(TARGETS)}",
            lines.get("target.name"),
            path,
        )
    params = tgt.get("params") or {}
    schema = TARGETS[tgt["name"]].params
    for k in params:
        if k not in schema:
            raise ConfigError(
                f"unknown key 'target.params.{k}' for target '{tgt['name']}'",
                lines.get(f"target.params.{k}"),
                path,
            )
    target = TargetBlock(tgt["name"], dict(params))

    sections = {}
    for key, cls in _SECTIONS.items():
        if key in raw and raw[key] is not None:
            sections[key] = _build_section(cls, raw[key], key, lines, path)
    if "baseline" in sections and sections["baseline"].method not in BASELINES:
        raise ConfigError(
            f"unknown baseline '{sections['baseline'].method}'", lines.get("baseline.method"), path
        )
    return ExperimentConfig(
        target=target,
        seed=raw["seed"],
        output=str(raw.get("output", "runs/out")),
        name=str(raw.get("name", "experiment")),
        **sections,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        line = getattr(getattr(exc, "problem_mark", None), "line", None)
        raise ConfigError(f"YAML syntax error: {exc}", None if line is None else line + 1, str(path)) from exc
    if node is None:
        raise ConfigError("config file is empty", 1, str(path))
    lines: dict[str, int] = {}
    raw = _to_python(node, lines)
    return _validate(raw, lines, str(path))
