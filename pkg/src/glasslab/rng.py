"""Deterministic random-number streams.

Scheme (fixed for the life of the package):

* Generator: numpy's ``Philox`` counter-based bit generator, 64-bit seeds.
* Stream splitting: ``numpy.random.SeedSequence(seed).spawn(...)``; every
  independent consumer gets its own child sequence, identified by an integer
  path, so results are independent of evaluation order and thread count.
* Gaussian variates: ``Generator.standard_normal`` (numpy's ziggurat).
  Reproducibility is therefore pinned to numpy's stream-compatibility
  guarantees for ``Generator``; the numpy version is recorded in every CLI
  artifact.

``derive(seed, *path)`` is the only entry point: the same ``(seed, path)``
always yields the same stream.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive", "spawn_keys"]


def derive(seed: int, *path: int) -> np.random.Generator:
    """Return the Generator for stream ``path`` under root ``seed``.

    ``path`` is a tuple of small integers naming the consumer, e.g.
    ``derive(seed, iteration, z_index)``.
    """
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def spawn_keys(seed: int, *path: int) -> np.random.SeedSequence:
    """SeedSequence handle for manual sub-splitting (rarely needed)."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
