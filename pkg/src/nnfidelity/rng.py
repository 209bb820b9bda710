"""Splittable, seedable random streams.

Every random draw in the package goes through :class:`RngStream`. A stream is
identified by a 64-bit root seed and a path of 64-bit indices; the generator
behind it is NumPy's PCG64 keyed by ``SeedSequence(root, spawn_key=path)``, so
``(root, path)`` fully determines the byte stream and distinct paths give
independent streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    path: tuple[int, ...] = ()
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "path", tuple(int(i) & _MASK64 for i in self.path))

    @property
    def generator(self) -> np.random.Generator:
        # created lazily, then shared so successive draws continue the stream
        if self._gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
            object.__setattr__(self, "_gen", np.random.Generator(np.random.PCG64(ss)))
        return self._gen

    def child(self, *index: int) -> "RngStream":
        """Independent sub-stream; does not consume anything from this one."""
        return RngStream(self.seed, self.path + tuple(index))

    # thin conveniences so call sites read naturally
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def poisson(self, lam, size=None):
        return self.generator.poisson(lam, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, a, size=None, p=None, replace=True):
        return self.generator.choice(a, size=size, p=p, replace=replace)

    def permutation(self, x):
        return self.generator.permutation(x)


def as_stream(rng: RngStream | int | None, default_seed: int = 0) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(default_seed)
    return RngStream(int(rng))
