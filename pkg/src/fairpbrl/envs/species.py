"""Sea otter / northern abalone co-management.

Densities live in [0, 1]. Abalone grow logistically and are eaten by otters
and poached; otters grow logistically while food is plentiful. Management
actions move the otter density directly or change the poaching pressure, and
oil spills occasionally halve the otter population. A species whose density
drops below ``extinction_threshold`` is gone for the rest of the episode.
"""

from dataclasses import dataclass

import numpy as np

from .base import EnvSpec, MultiObjectiveEnv

INTRODUCE, ANTIPOACHING, CONTROL, HALF_HALF, NO_ACTION = range(5)
ACTION_NAMES = ("introduce_otters", "antipoaching", "control_otters", "half_antipoaching_half_control", "no_action")


@dataclass(frozen=True)
class SpeciesParams:
    abalone_growth: float = 0.10
    otter_growth: float = 0.07
    predation: float = 0.12
    food_half_density: float = 0.3
    poaching: float = 0.05
    poaching_enforced: float = 0.01
    poaching_half: float = 0.03
    otter_step: float = 0.05
    otter_half_step: float = 0.025
    oil_spill_prob: float = 0.02
    extinction_threshold: float = 0.01
    init_low: float = 0.3
    init_high: float = 0.7
    episode_length: int = 100


class SpeciesConservation(MultiObjectiveEnv):
    """Observation and reward are both ``(otter, abalone)`` densities."""

    Params = SpeciesParams
    name = "species"

    def spec(self):
        return EnvSpec(self.name, 2, 5, 2, self.params.episode_length)

    def _reset(self):
        p = self.params
        self.otters, self.abalone = self._rng.uniform(p.init_low, p.init_high, size=2)
        self.extinct = [False, False]

    def set_state(self, otters, abalone):
        """Overwrite the densities (testing hook); zero marks a species extinct."""
        self.otters, self.abalone = float(otters), float(abalone)
        self.extinct = [self.otters == 0.0, self.abalone == 0.0]

    def _step(self, action):
        p = self.params
        xo, xa = self.otters, self.abalone
        poach = p.poaching
        if action == INTRODUCE:
            xo += p.otter_step
        elif action == ANTIPOACHING:
            poach = p.poaching_enforced
        elif action == CONTROL:
            xo -= p.otter_step
        elif action == HALF_HALF:
            poach = p.poaching_half
            xo -= p.otter_half_step
        xo = min(max(xo, 0.0), 1.0)

        new_xa = xa + p.abalone_growth * xa * (1 - xa) - p.predation * xo * xa - poach
        food = min(1.0, xa / p.food_half_density)
        new_xo = xo + p.otter_growth * xo * (1 - xo) * food
        # the spill draw is consumed every tick so the stream stays aligned across policies
        if self._rng.random() < p.oil_spill_prob:
            new_xo *= 0.5

        new = np.clip([new_xo, new_xa], 0.0, 1.0)
        for i in range(2):
            if self.extinct[i] or new[i] < p.extinction_threshold:
                self.extinct[i] = True
                new[i] = 0.0
        self.otters, self.abalone = float(new[0]), float(new[1])
        return new.copy()

    def _observe(self):
        return np.array([self.otters, self.abalone])
