"""Counter-based random streams, one per realization.

Realization ``i`` of an ensemble seeded with ``base_seed`` always draws from
the Philox stream keyed by ``(base_seed, i)``.  Results therefore do not
depend on how realizations are grouped into chunks or threads.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def path_generator(base_seed: int, index: int) -> np.random.Generator:
    """Return the generator of realization `index`."""
    ss = np.random.SeedSequence(int(base_seed) & _MASK64, spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


class NormalBlocks:
    """Buffered standard normals for a group of independent paths.

    Parameters
    ----------
    generators : list of numpy Generators, one per path.
    dim : Brownian dimension.
    block : number of time steps drawn per refill.
    """

    def __init__(self, generators, dim: int, block: int = 2048):
        self.generators = list(generators)
        self.dim = int(dim)
        self.block = int(block)
        self._buf = np.empty((self.dim, self.block, len(self.generators)))
        self._pos = self.block

    def _refill(self):
        for j, g in enumerate(self.generators):
            # each path consumes its own stream in a fixed (step, component) order
            self._buf[:, :, j] = g.standard_normal((self.block, self.dim)).T
        self._pos = 0

    def next(self) -> np.ndarray:
        """Standard normals of shape (dim, n_paths) for one step."""
        if self._pos >= self.block:
            self._refill()
        out = self._buf[:, self._pos, :]
        self._pos += 1
        return out


def ensemble_generators(base_seed: int, indices) -> list:
    return [path_generator(base_seed, i) for i in indices]
