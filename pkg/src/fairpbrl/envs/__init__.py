from .base import EnvSpec, MultiObjectiveEnv, SummedRewardEnv, Transition, TwoArmedBandit
from .resources import ResourceGathering
from .species import SpeciesConservation
from .traffic import TrafficIntersection

ENVIRONMENTS = {
    "species": SpeciesConservation,
    "resources": ResourceGathering,
    "traffic": TrafficIntersection,
    "bandit": TwoArmedBandit,
}


def make_env(name, **params):
    """Build a bundled environment by name, overriding any dynamics constant."""
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(**params)


__all__ = [
    "ENVIRONMENTS",
    "EnvSpec",
    "MultiObjectiveEnv",
    "ResourceGathering",
    "SpeciesConservation",
    "SummedRewardEnv",
    "TrafficIntersection",
    "Transition",
    "TwoArmedBandit",
    "make_env",
]
