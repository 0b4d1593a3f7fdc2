"""Common interface for the episodic multi-objective environments."""

from dataclasses import dataclass, fields, replace
from typing import NamedTuple

import numpy as np

from .._validation import ContractError, as_rng


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    n_actions: int
    n_objectives: int
    max_steps: int


class Transition(NamedTuple):
    observation: np.ndarray
    action: int
    reward: np.ndarray
    next_observation: np.ndarray
    terminal: bool


class MultiObjectiveEnv:
    """Episodic environment emitting a length-K ground-truth reward vector.

    Subclasses set ``Params`` (a frozen dataclass of dynamics constants) and
    implement ``_reset``, ``_step`` and ``_observe``. The base class owns the
    RNG stream, the step counter and the contract checks.
    """

    Params = None
    name = None

    def __init__(self, params=None, **overrides):
        base = params if params is not None else self.Params()
        unknown = set(overrides) - {f.name for f in fields(base)}
        if unknown:
            raise ContractError(f"unknown {self.name} parameter(s): {sorted(unknown)}")
        self.params = replace(base, **overrides)
        self._rng = None
        self._t = 0
        self._done = True

    def spec(self):
        raise NotImplementedError

    def reset(self, rng=None):
        """Start an episode; ``rng`` is the stream all stochastic dynamics draw from."""
        self._rng = as_rng(rng)
        self._t = 0
        self._done = False
        self._reset()
        return self._observe()

    def step(self, action):
        if self._rng is None:
            raise ContractError("step() called before reset()")
        if self._done:
            raise ContractError("step() called on a terminal episode")
        spec = self.spec()
        if int(action) != action or not 0 <= action < spec.n_actions:
            raise ContractError(f"invalid action {action!r} for {spec.n_actions} actions")
        action = int(action)
        obs = self._observe()
        reward = np.asarray(self._step(action), dtype=np.float64)
        self._t += 1
        self._done = self._t >= spec.max_steps
        return Transition(obs, action, reward, self._observe(), self._done)

    @property
    def t(self):
        return self._t

    def _reset(self):
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError

    def _observe(self):
        raise NotImplementedError


class SummedRewardEnv:
    """Wrap an environment so it reports a single objective, the reward sum.

    Used for the K=1 degeneration checks; everything else is delegated.
    """

    def __init__(self, env):
        self.env = env
        self.name = f"{env.name}-sum"

    def spec(self):
        inner = self.env.spec()
        return replace(inner, name=self.name, n_objectives=1)

    def reset(self, rng=None):
        return self.env.reset(rng)

    def step(self, action):
        tr = self.env.step(action)
        return tr._replace(reward=np.array([tr.reward.sum()]))

    @property
    def t(self):
        return self.env.t


@dataclass(frozen=True)
class BanditParams:
    n_objectives: int = 2
    episode_length: int = 10
    good_reward: float = 1.0
    bad_reward: float = 0.0
    good_arm: int = 1


class TwoArmedBandit(MultiObjectiveEnv):
    """Stateless two-armed bandit; the good arm pays ``good_reward`` on every objective."""

    Params = BanditParams
    name = "bandit"

    def spec(self):
        p = self.params
        return EnvSpec(self.name, 1, 2, p.n_objectives, p.episode_length)

    def _reset(self):
        pass

    def _step(self, action):
        p = self.params
        value = p.good_reward if action == p.good_arm else p.bad_reward
        return np.full(p.n_objectives, value)

    def _observe(self):
        return np.ones(1)
