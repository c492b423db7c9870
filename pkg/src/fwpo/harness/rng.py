"""Named random streams derived from one run seed.

Each stream is seeded from ``(seed, crc32(name))`` so adding a new consumer
never shifts the draws of an existing one.
"""

import zlib

import numpy as np

STREAMS = ("env", "explore", "init", "replay")


def stream(seed, name):
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def streams(seed, names=STREAMS):
    return {name: stream(seed, name) for name in names}
