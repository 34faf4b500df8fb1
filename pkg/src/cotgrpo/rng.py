"""Keyed random streams.

Every stochastic draw in the pipeline comes from a generator keyed by the run
seed, a stage label and integer indices, so results do not depend on the
order in which rollouts are executed.
"""

from __future__ import annotations

import zlib

import numpy as np


def stage_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, stage: str, *keys: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFF, stage_key(stage), *(int(k) & 0xFFFFFFFF for k in keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
