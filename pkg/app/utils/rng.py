"""
Counter-based random streams.

Every random draw in a run is keyed by (seed, role, *counters) so results do
not depend on how work is scheduled across worker processes.
"""

from typing import Dict

import numpy as np

# Stable integer codes so that stream keys never depend on hash randomization.
STREAM_ROLES: Dict[str, int] = {
    "coi": 1,
    "interferer": 2,
    "noise": 3,
    "channel": 4,
    "train": 5,
    "test": 6,
}


class RngStreams:
    """Factory of independent Philox generators derived from one 64-bit seed"""

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"Seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)

    def generator(self, role: str, *counters: int) -> np.random.Generator:
        if role not in STREAM_ROLES:
            raise ValueError(f"Unknown stream role: {role}")
        entropy = [self.seed, STREAM_ROLES[role], *[int(c) for c in counters]]
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def __repr__(self) -> str:
        return f"RngStreams(seed={self.seed})"


def step_generator(rng: np.random.Generator, step: int) -> np.random.Generator:
    """Independent sub-stream for one propagation step.

    The parent generator is left untouched; the step stream is the parent's
    bit generator jumped ahead step + 1 times.
    """
    return np.random.Generator(rng.bit_generator.jumped(step + 1))


def complex_normal(rng: np.random.Generator, variance: float, size) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with E|z|^2 = variance."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))
