"""
Experiment configuration: a versioned YAML document with the sections
``model``, ``agent``, ``env`` and ``run``.

Values come from ``yaml.safe_load``; ``yaml.compose`` supplies a dotted-path ->
line index so that every validation error points at the offending line.
Unknown keys are errors.
"""

from __future__ import annotations

import copy
import dataclasses
import logging
import pathlib
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .agent import AgentConfig, ExploreMode
from .envs import ENVIRONMENTS, Environment, make_env
from .exp_family import ExpFamilyPrior
from .model import CsqbmModel, ModelValidationError, build_model, random_hidden_spec
from .quantum_core import PauliHamiltonianSpec, PauliOp, PauliTerm


LOGGER = logging.getLogger("csqbm.config")

CONFIG_VERSION = 1
MAX_HIDDEN_QUBITS = 10

_ANY_LIST = "list"
_OPTIONAL_FLOAT = "optional float"
_OPTIONAL_INT = "optional int"
_FLOAT_OR_LIST = "float or list"

# key -> (default, kind); kind is a python type or one of the tags above
MODEL_SCHEMA: Dict[str, Tuple[Any, Any]] = {
    "n": (2, int),
    "m": (2, int),
    "coupling_basis": ("Z", str),
    "beta": (1.0, float),
    "prior_mu": (0.0, _FLOAT_OR_LIST),
    "prior_sigma": (1.0, _FLOAT_OR_LIST),
    "prior_log_scale": (0.0, float),
    "w_init_scale": (0.1, float),
    "hidden_terms": (None, _ANY_LIST),
    "hidden_init_scale": (0.1, float),
    "hidden_pairs": (True, bool),
    "quadratic_coupling": (False, bool),
    "strict_sampler": (True, bool),
    "theta_trainable": (False, bool),
}

_AGENT_DEFAULTS = AgentConfig()
AGENT_SCHEMA: Dict[str, Tuple[Any, Any]] = {
    "alpha": (_AGENT_DEFAULTS.alpha, float),
    "gamma": (_AGENT_DEFAULTS.gamma, float),
    "sweeps": (_AGENT_DEFAULTS.sweeps, int),
    "action_candidates": (_AGENT_DEFAULTS.action_candidates, int),
    "explore_mode": (_AGENT_DEFAULTS.explore_mode.value, str),
    "explore_beta": (None, _OPTIONAL_FLOAT),
    "epsilon_start": (_AGENT_DEFAULTS.epsilon_start, float),
    "epsilon_end": (_AGENT_DEFAULTS.epsilon_end, float),
    "epsilon_decay_steps": (_AGENT_DEFAULTS.epsilon_decay_steps, int),
    "batch_size": (_AGENT_DEFAULTS.batch_size, int),
    "buffer_capacity": (_AGENT_DEFAULTS.buffer_capacity, int),
    "warmup_steps": (_AGENT_DEFAULTS.warmup_steps, int),
    "target_sync": (_AGENT_DEFAULTS.target_sync, int),
    "action_refine_steps": (_AGENT_DEFAULTS.action_refine_steps, int),
    "refine_step_size": (_AGENT_DEFAULTS.refine_step_size, float),
    "beta_final": (None, _OPTIONAL_FLOAT),
    "beta_anneal_steps": (_AGENT_DEFAULTS.beta_anneal_steps, int),
    "divergence_ceiling": (_AGENT_DEFAULTS.divergence_ceiling, float),
    "divergence_patience": (_AGENT_DEFAULTS.divergence_patience, int),
}

ENV_SCHEMA: Dict[str, Tuple[Any, Any]] = {
    "name": ("bandit", str),
    "params": ({}, dict),
}

RUN_SCHEMA: Dict[str, Tuple[Any, Any]] = {
    "episodes": (100, int),
    "eval_episodes": (20, int),
    "output_dir": ("runs/default", str),
    "seed": (0, int),
    "checkpoint_interval": (100, int),
    "log_interval": (100, int),
    "max_steps": (None, _OPTIONAL_INT),
    "record_wall_time": (False, bool),
}

SCHEMA: Dict[str, Dict[str, Tuple[Any, Any]]] = {
    "model": MODEL_SCHEMA,
    "agent": AGENT_SCHEMA,
    "env": ENV_SCHEMA,
    "run": RUN_SCHEMA,
}


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: Optional[int] = None):
        location = f"{source}:{line}" if line is not None else source
        super().__init__(f"{location}: {message}")
        self.source = source
        self.line = line
        self.detail = message


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    model: Dict[str, Any]
    agent: Dict[str, Any]
    env: Dict[str, Any]
    run: Dict[str, Any]
    version: int = CONFIG_VERSION
    source: str = "<config>"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": self.version,
            "model": copy.deepcopy(self.model),
            "agent": copy.deepcopy(self.agent),
            "env": copy.deepcopy(self.env),
            "run": copy.deepcopy(self.run),
        }


# ==================== 行号索引 ====================

def line_index(text: str) -> Dict[str, int]:
    """Dotted key path -> 1-based line of the key."""
    index: Dict[str, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return index

    def walk(node: Any, prefix: str) -> None:
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
                index[path] = key_node.start_mark.line + 1
                walk(value_node, path)

    walk(root, "")
    return index


# ==================== 覆盖 ====================

def parse_override(text: str) -> Tuple[List[str], Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value", source="--set")
    key, _, raw = text.partition("=")
    parts = [part for part in key.strip().split(".") if part]
    if len(parts) < 2:
        raise ConfigError(f"override key {key!r} must name section.key", source="--set")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"override value for {key} is not valid YAML: {exc}", source="--set") from exc
    return parts, value


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    raw = copy.deepcopy(raw)
    for text in overrides:
        parts, value = parse_override(text)
        if parts[0] not in SCHEMA:
            raise ConfigError(f"unknown section {parts[0]!r} in override", source="--set")
        if len(parts) == 2 and parts[1] not in SCHEMA[parts[0]]:
            raise ConfigError(f"unknown key {'.'.join(parts)}", source="--set")
        node = raw
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[parts[-1]] = value
    return raw


# ==================== 校验 ====================

class _Validator:
    def __init__(self, source: str, lines: Dict[str, int]):
        self.source = source
        self.lines = lines

    def error(self, path: str, message: str) -> ConfigError:
        line = self.lines.get(path)
        while line is None and "." in path:
            path = path.rsplit(".", 1)[0]
            line = self.lines.get(path)
        return ConfigError(message, self.source, line)

    def coerce(self, path: str, value: Any, kind: Any) -> Any:
        if kind is bool:
            if not isinstance(value, bool):
                raise self.error(path, f"{path} must be true or false, got {value!r}")
            return value
        if kind is int or (kind == _OPTIONAL_INT and value is not None):
            if isinstance(value, bool) or not isinstance(value, int):
                raise self.error(path, f"{path} must be an integer, got {value!r}")
            return value
        if kind is float or (kind == _OPTIONAL_FLOAT and value is not None):
            if isinstance(value, str):
                # PyYAML reads exponent floats without a dot (1e-5) as strings
                try:
                    return float(value)
                except ValueError:
                    pass
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise self.error(path, f"{path} must be a number, got {value!r}")
            return float(value)
        if kind is str:
            if not isinstance(value, str):
                raise self.error(path, f"{path} must be a string, got {value!r}")
            return value
        if kind is dict:
            if value is None:
                return {}
            if not isinstance(value, dict):
                raise self.error(path, f"{path} must be a mapping, got {value!r}")
            return copy.deepcopy(value)
        if kind == _FLOAT_OR_LIST:
            if isinstance(value, list):
                return [self.coerce(f"{path}", item, float) for item in value]
            return self.coerce(path, value, float)
        if kind == _ANY_LIST:
            if value is not None and not isinstance(value, list):
                raise self.error(path, f"{path} must be a list, got {value!r}")
            return copy.deepcopy(value)
        return value

    def section(self, name: str, raw: Any) -> Dict[str, Any]:
        schema = SCHEMA[name]
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise self.error(name, f"section {name} must be a mapping")
        unknown = sorted(set(raw) - set(schema))
        if unknown:
            raise self.error(f"{name}.{unknown[0]}", f"unknown key {name}.{unknown[0]}")
        resolved = {}
        for key, (default, kind) in schema.items():
            value = raw.get(key, copy.deepcopy(default))
            resolved[key] = self.coerce(f"{name}.{key}", value, kind)
        return resolved


def _broadcast(values: Any, n: int) -> List[float]:
    if isinstance(values, list):
        return [float(v) for v in values]
    return [float(values)] * n


def _validate_model(check: _Validator, model: Dict[str, Any]) -> None:
    n, m = model["n"], model["m"]
    if n < 2:
        raise check.error("model.n", "model.n must be >= 2 (state and action coordinates)")
    if not 1 <= m <= MAX_HIDDEN_QUBITS:
        raise check.error("model.m", f"model.m must be in 1..{MAX_HIDDEN_QUBITS}")
    try:
        model["coupling_basis"] = PauliOp.parse(model["coupling_basis"]).value
    except ValueError as exc:
        raise check.error("model.coupling_basis", str(exc)) from exc
    if not model["beta"] > 0:
        raise check.error("model.beta", "model.beta must be > 0")
    for key in ("prior_mu", "prior_sigma"):
        if len(_broadcast(model[key], n)) != n:
            raise check.error(f"model.{key}", f"model.{key} must have {n} entries")
    if any(s <= 0 for s in _broadcast(model["prior_sigma"], n)):
        raise check.error("model.prior_sigma", "model.prior_sigma entries must be > 0")
    if not np.isfinite(model["prior_log_scale"]):
        raise check.error("model.prior_log_scale", "model.prior_log_scale must be finite")
    for key in ("w_init_scale", "hidden_init_scale"):
        if model[key] < 0:
            raise check.error(f"model.{key}", f"model.{key} must not be negative")
    if model["hidden_terms"] is not None:
        try:
            PauliHamiltonianSpec(m, tuple(PauliTerm.from_dict(item) for item in model["hidden_terms"]))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise check.error("model.hidden_terms", f"invalid hidden term: {exc}") from exc


def _validate_agent(check: _Validator, agent: Dict[str, Any], beta: float) -> None:
    if agent["explore_mode"] not in {mode.value for mode in ExploreMode}:
        raise check.error(
            "agent.explore_mode",
            f"agent.explore_mode must be one of {sorted(mode.value for mode in ExploreMode)}",
        )
    try:
        AgentConfig(beta=beta, **agent)
    except ValueError as exc:
        message = str(exc)
        key = message.split(" ", 1)[0]
        raise check.error(f"agent.{key}", f"agent.{message}" if key in agent else message) from exc


def _validate_env(check: _Validator, env: Dict[str, Any], n: int) -> None:
    if env["name"] not in ENVIRONMENTS:
        raise check.error("env.name", f"env.name must be one of {sorted(ENVIRONMENTS)}")
    try:
        instance = make_env(env["name"], env["params"])
    except (TypeError, ValueError) as exc:
        raise check.error("env.params", f"invalid env.params: {exc}") from exc
    expected = instance.spec.state_dim + instance.spec.action_dim
    if expected != n:
        raise check.error("model.n", f"model.n = {n} but env {env['name']} needs {expected}")


def _validate_run(check: _Validator, run: Dict[str, Any]) -> None:
    for key in ("episodes", "seed"):
        if run[key] < 0:
            raise check.error(f"run.{key}", f"run.{key} must not be negative")
    for key in ("eval_episodes", "checkpoint_interval", "log_interval"):
        if run[key] < 1:
            raise check.error(f"run.{key}", f"run.{key} must be >= 1")
    if run["max_steps"] is not None and run["max_steps"] < 0:
        raise check.error("run.max_steps", "run.max_steps must not be negative")


def resolve_config(raw: Any, source: str = "<config>", lines: Optional[Dict[str, int]] = None) -> ExperimentConfig:
    check = _Validator(source, lines or {})
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping", source, 1)
    if "version" not in raw:
        raise ConfigError("missing mandatory key 'version'", source, 1)
    version = raw["version"]
    if isinstance(version, bool) or version != CONFIG_VERSION:
        raise check.error("version", f"unsupported config version {version!r} (expected {CONFIG_VERSION})")
    unknown = sorted(set(raw) - set(SCHEMA) - {"version"})
    if unknown:
        raise check.error(unknown[0], f"unknown top-level key {unknown[0]}")
    sections = {name: check.section(name, raw.get(name)) for name in SCHEMA}
    _validate_model(check, sections["model"])
    _validate_agent(check, sections["agent"], sections["model"]["beta"])
    _validate_env(check, sections["env"], sections["model"]["n"])
    _validate_run(check, sections["run"])
    return ExperimentConfig(version=CONFIG_VERSION, source=source, **sections)


def load_config(path: pathlib.Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Read, override and validate; OSError propagates for unreadable files."""
    path = pathlib.Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {exc}", str(path), mark.line + 1 if mark else None) from exc
    if isinstance(raw, dict):
        raw = apply_overrides(raw, overrides)
    return resolve_config(raw, str(path), line_index(text))


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False, allow_unicode=True)


def loads_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}", source) from exc
    return resolve_config(raw, source, line_index(text))


# ==================== 构造对象 ====================

def build_prior(config: ExperimentConfig) -> ExpFamilyPrior:
    n = config.model["n"]
    return ExpFamilyPrior.gaussian(
        _broadcast(config.model["prior_mu"], n),
        _broadcast(config.model["prior_sigma"], n),
        log_scale=config.model["prior_log_scale"],
    )


def build_hidden_spec(config: ExperimentConfig, rng: np.random.Generator) -> PauliHamiltonianSpec:
    model = config.model
    if model["hidden_terms"] is not None:
        return PauliHamiltonianSpec(
            model["m"], tuple(PauliTerm.from_dict(item) for item in model["hidden_terms"])
        )
    return random_hidden_spec(
        model["m"],
        PauliOp.parse(model["coupling_basis"]),
        rng,
        scale=model["hidden_init_scale"],
        pairs=model["hidden_pairs"],
        diagonal_only=model["strict_sampler"],
    )


def build_csqbm(config: ExperimentConfig, rng: np.random.Generator) -> CsqbmModel:
    """Initial model from the ``model`` section; draws use ``rng`` (the init stream)."""
    model = config.model
    hidden = build_hidden_spec(config, rng)
    try:
        return build_model(
            build_prior(config),
            hidden,
            rng,
            float(model["w_init_scale"]),
            coupling_basis=PauliOp.parse(model["coupling_basis"]),
            beta=model["beta"],
            quadratic_coupling=model["quadratic_coupling"],
            strict_sampler=model["strict_sampler"],
            theta_trainable=model["theta_trainable"],
        )
    except ModelValidationError as exc:
        raise ConfigError(str(exc), config.source) from exc


def build_agent_config(config: ExperimentConfig) -> AgentConfig:
    return AgentConfig(beta=config.model["beta"], **config.agent)


def build_env(config: ExperimentConfig) -> Environment:
    return make_env(config.env["name"], config.env["params"])
