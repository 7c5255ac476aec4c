"""Counter-based randomness.

Two mechanisms live here. Site variates for the environment come from a
SplitMix64 finalizer applied to ``(seed, site)``, so any site can be queried
in any order. Walker streams are Philox generators keyed by a
``SeedSequence`` spawn key ``(role, *ids)``; adding a new role never shifts
an existing stream.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# stream roles
WALKER = 1
S_CHAIN = 2
S_HAT_CHAIN = 3
POST_EXIT = 4
S_HAT_INIT = 5
BATCH = 6
SAMPLES = 7
SEED_DERIVE = 8


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def site_uniforms(seed: int, sites) -> np.ndarray:
    """Uniform variates in [0, 1) attached to integer ``sites`` under ``seed``.

    A pure function of ``(seed, site)``: results do not depend on how the
    sites are batched or ordered.
    """
    sites = np.asarray(sites, dtype=np.int64)
    with np.errstate(over="ignore"):
        key = _mix(np.array([seed & _MASK], dtype=np.uint64))[0]
        h = _mix(sites.view(np.uint64) ^ key)
        h = _mix(h)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def stream(seed: int, role: int, *ids: int) -> np.random.Generator:
    """Independent generator for ``(seed, role, *ids)``."""
    ss = np.random.SeedSequence(entropy=seed & _MASK, spawn_key=(role, *ids))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *ids: int) -> int:
    """A 64-bit child seed, e.g. one environment seed per replicate."""
    ss = np.random.SeedSequence(entropy=seed & _MASK, spawn_key=(SEED_DERIVE, *ids))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
