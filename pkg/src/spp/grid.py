"""Core domain types: finite D-dimensional arrays, rectangular patches, partitions.

All positions and side-lengths are 1-based, matching the {1..N} index
convention used everywhere else in the package (file formats included).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ArrayShape",
    "Patch",
    "Partition",
    "indicator_vector",
    "bounds_from_indicator",
    "patch_volume",
    "contains",
    "time_points",
]

# Desk-scale guard: volumes must stay exactly representable in a float64.
_MAX_EXACT_VOLUME = 2**53


@dataclass(frozen=True)
class ArrayShape:
    """Finite D-dimensional index domain with per-dimension lengths."""

    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.dims) < 1:
            raise ValueError("need at least one dimension")
        if any(int(n) < 1 for n in self.dims):
            raise ValueError(f"dimension lengths must be >= 1, got {self.dims}")
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        if self.volume() > _MAX_EXACT_VOLUME:
            raise ValueError("array volume exceeds exact float64 range")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    def volume(self) -> int:
        return math.prod(self.dims)


@dataclass(frozen=True)
class Patch:
    """One rectangular patch: start/length per dimension plus its cost.

    The segment in dimension d covers positions start[d] .. start[d]+length[d]-1.
    ``rate`` is cost per covered cell (m / volume).
    """

    start: tuple[int, ...]
    length: tuple[int, ...]
    cost: float
    shape: ArrayShape

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(int(s) for s in self.start))
        object.__setattr__(self, "length", tuple(int(l) for l in self.length))
        if len(self.start) != self.shape.ndim or len(self.length) != self.shape.ndim:
            raise ValueError("start/length rank does not match the array shape")
        for s, l, n in zip(self.start, self.length, self.shape.dims):
            if not (1 <= s <= n):
                raise ValueError(f"start {s} outside 1..{n}")
            if l < 1:
                raise ValueError("stored patches must be nonempty (length >= 1)")
            if s + l - 1 > n:
                raise ValueError(f"patch [{s}, {s + l - 1}] exceeds dimension length {n}")
        if not (self.cost > 0):
            raise ValueError("patch cost must be positive")

    def volume(self) -> int:
        return math.prod(self.length)

    @property
    def rate(self) -> float:
        return self.cost / self.volume()

    def end(self, d: int) -> int:
        """Last covered position (inclusive) in dimension d."""
        return self.start[d] + self.length[d] - 1


@dataclass
class Partition:
    """An ordered draw of patches on a shape, with its generating budget.

    Order is ascending generating time; costs are the gaps between
    consecutive time points, so sum(costs) <= tau always holds.
    """

    shape: ArrayShape
    patches: list[Patch] = field(default_factory=list)
    tau: float = 1.0

    def __post_init__(self):
        if not (self.tau > 0):
            raise ValueError("budget tau must be positive")
        total = sum(p.cost for p in self.patches)
        if total > self.tau * (1 + 1e-12):
            raise ValueError(f"costs sum to {total} > tau={self.tau}")

    def __len__(self) -> int:
        return len(self.patches)


def indicator_vector(p: Patch, d: int) -> np.ndarray:
    """Binary position-indicator vector for dimension d of a patch."""
    if not (0 <= d < p.shape.ndim):
        raise IndexError(f"dimension index {d} out of range for D={p.shape.ndim}")
    u = np.zeros(p.shape.dims[d], dtype=np.int8)
    u[p.start[d] - 1 : p.start[d] + p.length[d] - 1] = 1
    return u


def bounds_from_indicator(u: np.ndarray) -> tuple[int, int]:
    """Recover (start, length) from a consecutive-segment indicator vector."""
    idx = np.flatnonzero(np.asarray(u) != 0)
    if idx.size == 0:
        raise ValueError("indicator vector has no set entries")
    s, e = int(idx[0]), int(idx[-1])
    if e - s + 1 != idx.size:
        raise ValueError("indicator vector is not a single consecutive segment")
    return s + 1, idx.size


def patch_volume(p: Patch) -> int:
    """Number of cells covered by the patch."""
    return p.volume()


def contains(p: Patch, cell: tuple[int, ...]) -> bool:
    """True iff the (1-based) cell lies inside the patch box."""
    return all(
        p.start[d] <= cell[d] <= p.start[d] + p.length[d] - 1
        for d in range(p.shape.ndim)
    )


def time_points(part: Partition) -> np.ndarray:
    """Generating times of the patches: prefix sums of the costs."""
    return np.cumsum([p.cost for p in part.patches])
