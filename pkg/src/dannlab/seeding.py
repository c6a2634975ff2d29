"""Named random streams so every source of randomness is seed-addressable.

Each consumer of randomness (init, shuffling, dropout, subsampling, ...)
draws from its own generator keyed by (seed, stream id). Streams must stay
independent so that, e.g., adding a domain branch never shifts the draws
seen by the task path; this is what makes seed-matched runs comparable.
"""

import numpy as np

# Stream ids are part of the reproducibility contract: do not renumber.
INIT_MAIN = 1        # shared-stack and task-head parameter init
INIT_DOMAIN = 2      # domain-head parameter init
SHUFFLE_SOURCE = 3   # per-epoch source row permutations
SHUFFLE_TARGET = 4   # per-epoch target row permutations
DROPOUT_TASK = 5     # dropout masks on the task path
DROPOUT_DOMAIN = 6   # dropout masks on the domain path
SUBSAMPLE = 7        # unlabeled-pool subsampling
DATA = 8             # synthetic data generation
SPLIT = 9            # dataset partitioning
PROBE = 10           # domain-probe head init and shuffling


def stream_rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    """Generator for one named stream of a seeded run."""
    return np.random.default_rng([int(seed), int(stream), *map(int, extra)])
