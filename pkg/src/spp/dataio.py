"""Edge-list ingestion, hold-out splits, AUC, and prediction CSV round-trips."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .relmodel import predict

__all__ = [
    "ingest",
    "EvalSplit",
    "make_split",
    "auc",
    "evaluate",
    "write_predictions",
    "read_predictions",
    "read_pairs",
    "read_labels",
]


def ingest(path, top_k: int | None = None) -> tuple[np.ndarray, list[str]]:
    """Read a `src<TAB>dst` edge list into a dense binary matrix.

    Duplicate edges collapse; `#` lines are comments. With ``top_k``,
    keeps the top_k nodes by total (in+out) degree over the deduplicated
    edges, ties broken by first appearance; matrix rows follow that
    selection order. Returns (R, node labels in matrix order).
    """
    edges: set[tuple[str, str]] = set()
    order: dict[str, int] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t") if "\t" in line else line.split()
        if len(fields) != 2 or not fields[0] or not fields[1]:
            raise ValueError(f"{path}:{lineno}: expected 'src<TAB>dst', got {raw!r}")
        src, dst = fields
        for node in (src, dst):
            if node not in order:
                order[node] = len(order)
        edges.add((src, dst))
    if not edges:
        raise ValueError(f"{path}: no edges found")

    degree: dict[str, int] = dict.fromkeys(order, 0)
    for src, dst in edges:
        degree[src] += 1
        degree[dst] += 1
    nodes = list(order)
    if top_k is not None:
        nodes = sorted(nodes, key=lambda v: (-degree[v], order[v]))[:top_k]
    index = {v: i for i, v in enumerate(nodes)}
    r = np.zeros((len(nodes), len(nodes)), dtype=np.int8)
    for src, dst in edges:
        if src in index and dst in index:
            r[index[src], index[dst]] = 1
    return r, nodes


@dataclass(frozen=True)
class EvalSplit:
    """Train mask plus the held-out cells and their labels."""

    train_mask: np.ndarray
    test_cells: np.ndarray  # (n, 2) 0-based
    test_labels: np.ndarray
    seed: int
    ratio: float


def make_split(r: np.ndarray, ratio: float, seed: int) -> EvalSplit:
    """Hold out floor(ratio * cells) uniformly chosen cells (1s and 0s alike)."""
    if not (0.0 < ratio < 1.0):
        raise ValueError("ratio must lie in (0, 1)")
    r = np.asarray(r)
    n_cells = r.size
    n_test = int(ratio * n_cells)
    rng = np.random.default_rng(seed)
    flat = rng.choice(n_cells, size=n_test, replace=False)
    cells = np.column_stack(np.unravel_index(flat, r.shape)).astype(np.int64)
    mask = np.ones(r.shape, dtype=bool)
    mask[cells[:, 0], cells[:, 1]] = False
    labels = r[cells[:, 0], cells[:, 1]].astype(np.int8)
    return EvalSplit(mask, cells, labels, seed, ratio)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both a positive and a negative label")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(samples, splits, r: np.ndarray) -> dict:
    """Posterior-mean AUC per split; mean and sample std across splits."""
    if not isinstance(splits, (list, tuple)):
        splits = [splits]
    values = []
    for split in splits:
        scores = predict(samples, split.test_cells)
        values.append(auc(scores, split.test_labels))
    values = np.asarray(values)
    return {
        "auc_per_split": values.tolist(),
        "auc_mean": float(values.mean()),
        "auc_std": float(values.std(ddof=1)) if len(values) > 1 else 0.0,
    }


def write_predictions(path, pairs, scores):
    """CSV `row,col,score`, pairs written 1-based."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "score"])
        for (i, j), s in zip(np.asarray(pairs), scores):
            w.writerow([int(i) + 1, int(j) + 1, repr(float(s))])


def read_predictions(path) -> tuple[np.ndarray, np.ndarray]:
    pairs, scores = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pairs.append((int(row["row"]) - 1, int(row["col"]) - 1))
            scores.append(float(row["score"]))
    return np.asarray(pairs, dtype=np.int64), np.asarray(scores)


def read_pairs(path) -> np.ndarray:
    """TSV `row<TAB>col`, 1-based on disk, 0-based in memory."""
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'row<TAB>col'")
        pairs.append((int(fields[0]) - 1, int(fields[1]) - 1))
    return np.asarray(pairs, dtype=np.int64)


def read_labels(path) -> dict[tuple[int, int], int]:
    """TSV `row<TAB>col<TAB>label`, 1-based cells, binary labels."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 3 or fields[2] not in ("0", "1"):
            raise ValueError(f"{path}:{lineno}: expected 'row<TAB>col<TAB>{{0,1}}'")
        out[(int(fields[0]) - 1, int(fields[1]) - 1)] = int(fields[2])
    return out
