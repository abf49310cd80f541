"""Deterministic RNG derivation from a single master seed.

Every consumer gets its generator via ``derive_rng(master, namespace, *key)``
so a run is fully determined by its master seed. Namespaces keep the streams
of unrelated subsystems apart:

* 0: network initialization
* 1: training environment instances, keyed (map index, entry index)
* 2: training episodes, keyed (map index, entry index, episode)
* 3: validation sweeps, keyed (sweep index, instance index, episode)
* 4: evaluation episodes, keyed (episode index,)
* 5: passive training, keyed (map index, episode)
"""

from __future__ import annotations

import numpy as np

NS_NETWORK = 0
NS_INSTANCE = 1
NS_TRAIN_EPISODE = 2
NS_VALIDATION = 3
NS_EVALUATION = 4
NS_PASSIVE_TRAIN = 5


def derive_rng(master_seed: int, namespace: int, *key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(master_seed, spawn_key=(namespace, *key))
    return np.random.default_rng(seq)
