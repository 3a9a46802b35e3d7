"""JSON persistence for partitions, fitted states, and posterior samples.

Positions, lengths, and permutations are 1-based on disk. Floats go
through Python's shortest-round-trip repr, so save/load round-trips are
exact. Every file carries a schema version and loading a mismatched
version is an error, never a silent coercion.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grid import ArrayShape, Partition, Patch
from .prior import HyperParams
from .relmodel import PosteriorSample

__all__ = [
    "SCHEMA_VERSION",
    "state_to_dict",
    "state_from_dict",
    "save_state",
    "load_state",
    "save_samples",
    "load_samples",
]

SCHEMA_VERSION = 1


def state_to_dict(
    part: Partition,
    hp: HyperParams,
    row_of: np.ndarray | None = None,
    col_of: np.ndarray | None = None,
) -> dict:
    out = {
        "version": SCHEMA_VERSION,
        "dims": list(part.shape.dims),
        "tau": part.tau,
        "theta": hp.theta,
        "gamma": hp.gamma,
        "patches": [
            {"s": list(p.start), "l": list(p.length), "m": p.cost} for p in part.patches
        ],
    }
    if row_of is not None:
        out["row_perm"] = [int(v) + 1 for v in row_of]
    if col_of is not None:
        out["col_perm"] = [int(v) + 1 for v in col_of]
    return out


def _check_version(obj: dict, path):
    got = obj.get("version")
    if got != SCHEMA_VERSION:
        raise ValueError(f"{path}: schema version {got!r}, expected {SCHEMA_VERSION}")


def state_from_dict(obj: dict) -> tuple[Partition, HyperParams, np.ndarray | None, np.ndarray | None]:
    shape = ArrayShape(tuple(obj["dims"]))
    part = Partition(
        shape,
        [Patch(tuple(p["s"]), tuple(p["l"]), float(p["m"]), shape) for p in obj["patches"]],
        float(obj["tau"]),
    )
    hp = HyperParams(tau=float(obj["tau"]), theta=float(obj["theta"]), gamma=float(obj["gamma"]))
    row = obj.get("row_perm")
    col = obj.get("col_perm")
    row_of = None if row is None else np.asarray(row, dtype=np.int64) - 1
    col_of = None if col is None else np.asarray(col, dtype=np.int64) - 1
    return part, hp, row_of, col_of


def _dump(obj: dict, path):
    Path(path).write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def _load(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: corrupt JSON ({exc})") from exc
    _check_version(obj, path)
    return obj


def save_state(path, part, hp, row_of=None, col_of=None):
    _dump(state_to_dict(part, hp, row_of, col_of), path)


def load_state(path):
    return state_from_dict(_load(path))


def save_samples(path, samples: list[PosteriorSample], hp: HyperParams, meta: dict | None = None):
    if not samples:
        raise ValueError("no posterior samples to save")
    body = {
        "version": SCHEMA_VERSION,
        "kind": "spp-samples",
        "meta": meta or {},
        "states": [state_to_dict(s.part, hp, s.row_of, s.col_of) for s in samples],
    }
    _dump(body, path)


def load_samples(path) -> tuple[list[PosteriorSample], HyperParams, dict]:
    obj = _load(path)
    if obj.get("kind") != "spp-samples":
        raise ValueError(f"{path}: not a samples file")
    samples = []
    hp = None
    for st in obj["states"]:
        _check_version(st, path)
        part, hp, row_of, col_of = state_from_dict(st)
        n1, n2 = part.shape.dims[0], part.shape.dims[-1]
        if row_of is None:
            row_of = np.arange(n1)
        if col_of is None:
            col_of = np.arange(n2)
        samples.append(PosteriorSample(part, row_of, col_of, hp.gamma))
    return samples, hp, obj.get("meta", {})
