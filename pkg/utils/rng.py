"""Per-trial random streams for reproducible parallel Monte Carlo."""
import numpy as np

SEED_BITS = 64


def trial_generator(master_seed: int, index: int) -> np.random.Generator:
    """Stream for one trial; depends only on (master_seed, index)."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(seq))


def generate_seed() -> int:
    return int(np.random.SeedSequence().entropy % (1 << SEED_BITS))
