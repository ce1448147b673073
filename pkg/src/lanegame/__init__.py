"""Two-player Markov game for robust lane changing.

A protagonist steers a kinematic bicycle toward a randomly assigned target
lane while an adversary injects bounded acceleration/steering disturbances.
Policies are trained with alternating best response (RARL) or neural
fictitious self-play (NFSP) under zero-sum or semi-competitive rewards, and
evaluated with heavy-tailed, adversarial, and model-mismatch test batteries.
"""

from lanegame.errors import (
    CheckpointError,
    ConfigError,
    ContractViolationError,
    InvalidInputError,
    LaneGameError,
)

__all__ = [
    "LaneGameError",
    "InvalidInputError",
    "ContractViolationError",
    "ConfigError",
    "CheckpointError",
]

__version__ = "0.1.0"
