"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment and blank lines are
ignored. Values are parsed according to the type of the key's default.
Lists (hidden sizes, weight vectors) are comma-separated; an empty value
means "use the built-in default" for optional vectors. Environment
parameters are addressed as ``env.<name>.<param>``, for example
``env.resources.position_encoding = coords``.

Every key and its default is listed in :data:`DEFAULTS` (run ``fairpbrl
keys`` to print them).
"""

import dataclasses
from pathlib import Path

from ._validation import ContractError
from .envs import ENVIRONMENTS

# key -> (default, FairPPO parameter name or None)
_RUN_KEYS = {
    "env": ("resources", None),
    "variant": ("fpbrl", None),
    "seed": (0, None),
    "out": ("runs", None),
    "welfare.weights": ((), "weights"),
    "agent.total_steps": (150_000, "total_steps"),
    "agent.buffer_size": (2048, "buffer_size"),
    "agent.gamma": (0.99, "gamma"),
    "agent.gae_lambda": (0.95, "gae_lambda"),
    "agent.clip_eps": (0.2, "clip_eps"),
    "agent.policy_lr": (3e-4, "policy_lr"),
    "agent.critic_lr": (3e-4, "critic_lr"),
    "agent.ppo_epochs": (4, "ppo_epochs"),
    "agent.minibatch_size": (64, "minibatch_size"),
    "agent.entropy_coef": (0.01, "entropy_coef"),
    "agent.max_grad_norm": (0.5, "max_grad_norm"),
    "agent.hidden": ((64, 64), "hidden"),
    "agent.j_decay": (0.9, "j_decay"),
    "agent.j_source": ("learned", "j_source"),
    "agent.ppo_reward_weights": ((), "ppo_reward_weights"),
    "reward.lr": (1e-3, "reward_lr"),
    "reward.epochs": (5, "reward_epochs"),
    "reward.batch_size": (32, "reward_batch_size"),
    "reward.normalization": ("shared", "reward_normalization"),
    "pref.segment_length": (25, "segment_length"),
    "pref.session_size": (30, "session_size"),
    "pref.budget": (700, "budget"),
    "pref.discounted": (True, "pref_discounted"),
    "pref.noisy": (False, "noisy_labels"),
    "eval.trajectories": (100, None),
    "eval.greedy": (False, None),
    "eval.seed": (0, None),
}

_VECTOR_KEYS = {"welfare.weights", "agent.ppo_reward_weights"}
_INT_VECTOR_KEYS = {"agent.hidden"}


def _env_defaults():
    out = {}
    for name, cls in ENVIRONMENTS.items():
        for f in dataclasses.fields(cls.Params):
            out[f"env.{name}.{f.name}"] = f.default
    return out


DEFAULTS = {**{k: v for k, (v, _) in _RUN_KEYS.items()}, **_env_defaults()}


def _parse_bool(key, text):
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ContractError(f"{key}: expected a boolean, got {text!r}")


def parse_value(key, text):
    """Convert ``text`` to the type of ``key``'s default."""
    if key not in DEFAULTS:
        raise ContractError(f"unknown config key: {key}")
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if key in _VECTOR_KEYS:
            return tuple(float(x) for x in text.split(",") if x.strip())
        if key in _INT_VECTOR_KEYS:
            return tuple(int(x) for x in text.split(",") if x.strip())
        if isinstance(default, bool):
            return _parse_bool(key, text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ContractError(f"{key}: cannot parse {text!r}") from None
    return text


def format_value(value):
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_lines(lines, source="<config>"):
    """``{key: text}`` from config lines; unknown keys are rejected by name."""
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ContractError(f"unknown config key: {key}")
        out[key] = value
    return out


def load(path=None, overrides=()):
    """Full resolved config: defaults, then the file, then ``key=value`` overrides."""
    cfg = dict(DEFAULTS)
    if path is not None:
        text = Path(path).read_text()
        for key, value in parse_lines(text.splitlines(), str(path)).items():
            cfg[key] = parse_value(key, value)
    for item in overrides:
        for key, value in parse_lines([item], "--set").items():
            cfg[key] = parse_value(key, value)
    return cfg


def dump(cfg, path):
    """Write every key, sorted, so a run directory records its full config."""
    lines = [f"{k} = {format_value(cfg[k])}" for k in sorted(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")


def env_params(cfg, name=None):
    name = cfg["env"] if name is None else name
    if name not in ENVIRONMENTS:
        raise ContractError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}")
    prefix = f"env.{name}."
    return {k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix)}


def agent_params(cfg):
    """Keyword arguments for :class:`fairpbrl.agent.FairPPO` (without ``variant``/``random_state``)."""
    out = {}
    for key, (_, param) in _RUN_KEYS.items():
        if param is None:
            continue
        value = cfg[key]
        if key in _VECTOR_KEYS and not value:
            value = None
        out[param] = value
    return out
