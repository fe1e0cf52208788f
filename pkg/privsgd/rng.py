import numpy as np


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for (seed, *keys); order of creation does not matter."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def fresh_seed() -> int:
    return int(np.random.SeedSequence().entropy % (2**63))
