"""Seed derivation.

Every random stream in the package is derived from one top-level integer
seed plus a path of keys (component names and indices)::

    derive_rng(seed, "folds", replication)
    derive_rng(seed, "forest", tree_index)

String keys are mapped to integers with CRC-32 so the derivation is stable
across processes and Python versions. Two calls with the same path always
return generators producing identical streams, which is what lets partial
re-runs agree with full runs.
"""

import zlib

import numpy as np


def _key_to_int(key):
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"seed keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(seed, *keys):
    """Return a SeedSequence for ``seed`` extended by ``keys``."""
    return np.random.SeedSequence([_key_to_int(seed), *(_key_to_int(k) for k in keys)])


def derive_rng(seed, *keys):
    return np.random.default_rng(derive_seed(seed, *keys))


def derive_int(seed, *keys):
    """A derived 32-bit integer seed, for APIs that take plain ints."""
    return int(derive_seed(seed, *keys).generate_state(1)[0])
