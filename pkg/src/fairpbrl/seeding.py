"""Independent random streams derived from one master seed.

Stream ``i`` of master seed ``s`` is ``PCG64(SeedSequence(s, spawn_key=(i,)))``.
SeedSequence hashes the spawn key into the generator state, so the draws of
one stream do not depend on whether, or how much, any other stream is used.
"""

import numpy as np

STREAMS = {
    "env": 0,
    "policy_init": 1,
    "critic_init": 2,
    "reward_init": 3,
    "oracle": 4,
    "eval": 5,
    "actions": 6,
    "ppo": 7,
}


def stream(master_seed, name):
    """Generator for a named component; see ``STREAMS`` for the index map."""
    index = STREAMS[name] if isinstance(name, str) else int(name)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(master_seed), spawn_key=(index,))))


def trajectory_seed(master_seed, index):
    """Per-trajectory stream for evaluation rollouts."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(STREAMS["eval"], int(index)))
    return np.random.Generator(np.random.PCG64(ss))
