"""PGM rendering of 2-D partitions (no codec dependencies, byte-stable)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import Partition
from .relmodel import rate_field, _box_slices

__all__ = ["render_partition"]


def render_partition(part: Partition, path, mode: str = "rate"):
    """Write a binary PGM, one pixel per cell.

    rate mode: 255 * min(1, sum of covering rates / max cell sum), so
    overlaps are strictly brighter; an empty partition is all black.
    outline mode: patch borders at 255 on black.
    """
    if part.shape.ndim != 2:
        raise ValueError("can only render 2-D partitions")
    n1, n2 = part.shape.dims
    if mode == "rate":
        acc = rate_field(part, 1.0)
        peak = acc.max()
        frac = np.minimum(1.0, acc / peak) if peak > 0 else acc
        img = np.floor(255.0 * frac + 0.5).astype(np.uint8)
    elif mode == "outline":
        img = np.zeros((n1, n2), dtype=np.uint8)
        for p in part.patches:
            sl = _box_slices(p.start, p.length)
            img[sl[0].start, sl[1]] = 255
            img[sl[0].stop - 1, sl[1]] = 255
            img[sl[0], sl[1].start] = 255
            img[sl[0], sl[1].stop - 1] = 255
    else:
        raise ValueError(f"unknown render mode {mode!r}")
    header = f"P5\n{n2} {n1}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())
