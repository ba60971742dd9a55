"""Hierarchical seed derivation.

All randomness comes from numpy's PCG64 generator. A child stream is addressed
by the tuple ``(root, *keys)`` of non-negative integers, fed through
:class:`numpy.random.SeedSequence`, so any component can be re-run in isolation
from the root seed alone.
"""

import numpy as np

# stream labels under a root seed
GRAPH, DATA, DICTIONARY, SELECTION, PERMUTATION, SCENARIO_CHOICE = range(6)


def derive_seed(root: int, *keys: int) -> int:
    """Deterministic 63-bit child seed for ``(root, *keys)``."""
    ss = np.random.SeedSequence([int(root), *map(int, keys)])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def rng_for(root: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(root), *map(int, keys)])))
