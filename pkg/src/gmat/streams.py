"""Named, splittable random streams.

Every random consumer in the package (parameter init, reparameterized
sampling, batch shuffling, replay, data generation) draws from its own
substream so that adding draws to one consumer never perturbs another.
Substreams are derived statelessly from ``(root seed, name path)``, which is
what makes checkpointed runs reproducible from the seed alone.

Reserved consumer names: ``data``, ``init``, ``train``/iteration,
``split``/iteration, ``task``/index, ``replay``, ``eval``.  Inside a training
run the passed-in stream is split once, in order, into
``(batching, sampling, replay)``.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, *path) -> np.random.Generator:
    """Derive an independent generator for consumer ``path`` under ``seed``.

    The path is hashed so stream identity depends only on the names, never on
    call order.  Same seed and path always yields the same stream.
    """
    tag = "/".join(str(p) for p in path)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "big") for i in range(0, 16, 4)]
    seq = np.random.SeedSequence(entropy=[int(seed) & 0xFFFFFFFFFFFFFFFF, *words])
    return np.random.Generator(np.random.PCG64(seq))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split ``rng`` into ``n`` independent child generators (fixed order)."""
    children = rng.bit_generator.seed_seq.spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]
