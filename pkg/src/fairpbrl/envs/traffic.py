"""Single signalised intersection with one queue per approach side.

Each tick every side receives a car with its own Bernoulli probability, the
side holding the green releases up to ``discharge`` cars, and a change of
phase costs ``all_red_ticks`` ticks in which nobody moves. Objective ``i`` is
minus the number of cars queued on side ``i`` (scaled), so an episode return
is proportional to minus the total waiting time on that side.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .base import EnvSpec, MultiObjectiveEnv


@dataclass(frozen=True)
class TrafficParams:
    arrival_p0: float = 0.5
    arrival_p1: float = 0.3
    arrival_p2: float = 0.3
    arrival_p3: float = 0.1
    discharge: int = 2
    all_red_ticks: int = 2
    reward_scale: float = 50.0
    wait_scale: float = 100.0
    queue_scale: float = 20.0
    episode_length: int = 300


class TrafficIntersection(MultiObjectiveEnv):
    """Action ``i`` requests green for side ``i``.

    Observation: per-side accumulated wait of queued cars, per-side queue
    length (both scaled), then a one-hot of the phase that is green or about
    to turn green.
    """

    Params = TrafficParams
    name = "traffic"

    @property
    def arrival_probs(self):
        p = self.params
        return np.array([p.arrival_p0, p.arrival_p1, p.arrival_p2, p.arrival_p3])

    def spec(self):
        return EnvSpec(self.name, 12, 4, 4, self.params.episode_length)

    def _reset(self):
        self.queues = [deque() for _ in range(4)]
        self.phase = 0
        self.red_remaining = 0

    @property
    def queue_lengths(self):
        return np.array([len(q) for q in self.queues], dtype=np.int64)

    def waits(self):
        now = self._t
        return np.array([float(sum(now - a for a in q)) for q in self.queues])

    def _step(self, action):
        p = self.params
        if action != self.phase:
            self.phase = action
            self.red_remaining = p.all_red_ticks
        if self.red_remaining > 0:
            self.red_remaining -= 1
        else:
            q = self.queues[self.phase]
            for _ in range(min(p.discharge, len(q))):
                q.popleft()
        arrivals = self._rng.random(4) < self.arrival_probs
        # arrival tick is stamped one step ahead so a new car has waited 1 after this tick
        for side in np.flatnonzero(arrivals):
            self.queues[side].append(self._t)
        return -self.queue_lengths.astype(np.float64) / p.reward_scale

    def _observe(self):
        p = self.params
        phase = np.zeros(4)
        phase[self.phase] = 1.0
        return np.concatenate([
            self.waits() / p.wait_scale,
            self.queue_lengths / p.queue_scale,
            phase,
        ])
