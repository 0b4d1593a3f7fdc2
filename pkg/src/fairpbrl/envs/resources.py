"""Resource gathering on a small grid.

One gold, one gem and two stones sit on distinct cells. Walking onto an item
collects it (reward in that item's objective) and the item reappears on a
uniformly chosen cell free of the agent and the other items.
"""

from dataclasses import dataclass

import numpy as np

from .base import EnvSpec, MultiObjectiveEnv

UP, DOWN, LEFT, RIGHT = range(4)
_MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
GOLD, GEM, STONE = range(3)


@dataclass(frozen=True)
class ResourceParams:
    size: int = 5
    gold_value: float = 1.0
    gem_value: float = 1.0
    stone_value: float = 0.4
    n_stones: int = 2
    episode_length: int = 200
    count_scale: float = 10.0
    # "onehot" (size*size cells) or "coords" (row, col scaled to [0, 1])
    position_encoding: str = "onehot"
    # item offsets in the observation; without them a learner cannot tell where items are
    observe_items: bool = False
    # per-direction one-hot of the item type in the neighbouring cell
    observe_neighbours: bool = False


class ResourceGathering(MultiObjectiveEnv):
    """Observation: agent cell (one-hot, or scaled row/column), collection
    counts divided by ``count_scale``, then optionally

    * ``observe_items``: row/column offset from the agent to the gold, the
      gem and each stone (nearest stone first), divided by ``size - 1``;
    * ``observe_neighbours``: for each move direction, a one-hot of the item
      type on the adjacent cell.
    """

    Params = ResourceParams
    name = "resources"

    def spec(self):
        p = self.params
        n_items = 2 + p.n_stones
        pos_dim = p.size * p.size if p.position_encoding == "onehot" else 2
        obs_dim = (pos_dim + 3 + (2 * n_items if p.observe_items else 0)
                   + (12 if p.observe_neighbours else 0))
        return EnvSpec(self.name, obs_dim, 4, 3, p.episode_length)

    @property
    def item_types(self):
        return [GOLD, GEM] + [STONE] * self.params.n_stones

    def _reset(self):
        p = self.params
        n_cells = p.size * p.size
        cells = self._rng.choice(n_cells, size=1 + len(self.item_types), replace=False)
        self.agent = divmod(int(cells[0]), p.size)
        self.items = [divmod(int(c), p.size) for c in cells[1:]]
        self.counts = np.zeros(3)

    def _free_cell(self, exclude_index):
        p = self.params
        taken = {self.agent} | {pos for j, pos in enumerate(self.items) if j != exclude_index}
        free = [divmod(c, p.size) for c in range(p.size * p.size) if divmod(c, p.size) not in taken]
        return free[int(self._rng.integers(len(free)))]

    def _step(self, action):
        p = self.params
        dr, dc = _MOVES[action]
        r = min(max(self.agent[0] + dr, 0), p.size - 1)
        c = min(max(self.agent[1] + dc, 0), p.size - 1)
        self.agent = (r, c)
        reward = np.zeros(3)
        values = (p.gold_value, p.gem_value, p.stone_value)
        for j, pos in enumerate(self.items):
            if pos == self.agent:
                kind = self.item_types[j]
                reward[kind] += values[kind]
                self.counts[kind] += 1
                self.items[j] = self._free_cell(j)
                break
        return reward

    def _observe(self):
        p = self.params
        if p.position_encoding == "onehot":
            position = np.zeros(p.size * p.size)
            position[self.agent[0] * p.size + self.agent[1]] = 1.0
        else:
            position = np.array(self.agent, dtype=np.float64) / max(p.size - 1, 1)
        parts = [position, self.counts / p.count_scale]
        if p.observe_items:
            scale = max(p.size - 1, 1)
            offsets = [np.subtract(pos, self.agent) / scale for pos in self.items]
            stones = sorted(offsets[2:], key=lambda d: (np.abs(d).sum(), tuple(d)))
            parts.append(np.concatenate(offsets[:2] + stones))
        if p.observe_neighbours:
            ahead = np.zeros((4, 3))
            types = self.item_types
            for move, (dr, dc) in _MOVES.items():
                cell = (self.agent[0] + dr, self.agent[1] + dc)
                for j, pos in enumerate(self.items):
                    if pos == cell:
                        ahead[move, types[j]] = 1.0
            parts.append(ahead.ravel())
        return np.concatenate(parts)
