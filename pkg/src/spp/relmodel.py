"""2-D relational model: rate aggregation, squashing, Bernoulli likelihood.

Observed entries live in data coordinates; the partition lives on a
latent grid. row_of[i] / col_of[j] give the data row/column sitting at
latent row i / column j (0-based internally; file formats are 1-based).
The latent-cell intensity is sigma(sum of rate/gamma over covering
patches), and entry R[row_of[i], col_of[j]] is Bernoulli of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import ArrayShape, Partition, Patch, contains
from .prior import HyperParams, sample_partition_direct

__all__ = [
    "SIGMA_SHIFT",
    "RHO_EPS",
    "sigma",
    "aggregate_rate",
    "RelationalState",
    "PosteriorSample",
    "log_likelihood",
    "delta_log_likelihood",
    "apply_change",
    "AddPatch",
    "RemovePatch",
    "MovePatch",
    "ChangeCost",
    "SwapRows",
    "SwapCols",
    "sample_relations",
    "generate_synthetic",
    "predict",
]

SIGMA_SHIFT = math.exp(-6)
RHO_EPS = 1e-12


def sigma(x):
    """Squash an aggregate rate into (0, 1): (e^(x+e^-6) - 1) / (e^(x+e^-6) + 1).

    Evaluated via expm1 for conditioning; clamped to [RHO_EPS, 1 - RHO_EPS]
    so the Bernoulli log-likelihood never sees 0 or 1. The exponent is
    capped at 60, far beyond where the upper clamp already binds.
    """
    e = np.expm1(np.minimum(np.asarray(x, dtype=float) + SIGMA_SHIFT, 60.0))
    out = np.clip(e / (e + 2.0), RHO_EPS, 1.0 - RHO_EPS)
    return float(out) if out.ndim == 0 else out


def aggregate_rate(part: Partition, i: int, j: int, gamma: float) -> float:
    """Sum of rate/gamma over the patches covering (1-based) cell (i, j)."""
    return sum(p.rate / gamma for p in part.patches if contains(p, (i, j)))


def rate_field(part: Partition, gamma: float = 1.0) -> np.ndarray:
    """Aggregate rate/gamma over the whole grid (fresh, no caching)."""
    acc = np.zeros(part.shape.dims)
    for p in part.patches:
        acc[_box_slices(p.start, p.length)] += p.rate / gamma
    return acc


# A rectangle is ((start1, start2), (len1, len2)) in 1-based coordinates.
Rect = tuple[tuple[int, int], tuple[int, int]]


def _box_slices(start, length) -> tuple[slice, slice]:
    return (
        slice(start[0] - 1, start[0] - 1 + length[0]),
        slice(start[1] - 1, start[1] - 1 + length[1]),
    )


def _rect_intersect(a: Rect, b: Rect) -> Rect | None:
    lo = [max(a[0][d], b[0][d]) for d in (0, 1)]
    hi = [min(a[0][d] + a[1][d], b[0][d] + b[1][d]) for d in (0, 1)]
    if lo[0] >= hi[0] or lo[1] >= hi[1]:
        return None
    return (lo[0], lo[1]), (hi[0] - lo[0], hi[1] - lo[1])


def _rect_diff(a: Rect, b: Rect) -> list[Rect]:
    """a minus b as up to four disjoint rectangles."""
    inter = _rect_intersect(a, b)
    if inter is None:
        return [a]
    (as1, as2), (al1, al2) = a
    (is1, is2), (il1, il2) = inter
    out: list[Rect] = []
    if is1 > as1:  # rows above the intersection
        out.append(((as1, as2), (is1 - as1, al2)))
    below = (as1 + al1) - (is1 + il1)
    if below > 0:
        out.append(((is1 + il1, as2), (below, al2)))
    if is2 > as2:  # left strip within the intersection rows
        out.append(((is1, as2), (il1, is2 - as2)))
    right = (as2 + al2) - (is2 + il2)
    if right > 0:
        out.append(((is1, is2 + il2), (il1, right)))
    return out


def _two_box_regions(
    box_a: Rect | None, da: float, box_b: Rect | None, db: float
) -> list[tuple[Rect, float]]:
    """Disjoint (rectangle, aggregate-delta) cover of two overlapping boxes."""
    if box_a is None and box_b is None:
        return []
    if box_a is None:
        return [(box_b, db)]
    if box_b is None:
        return [(box_a, da)]
    regions = [(r, da) for r in _rect_diff(box_a, box_b)]
    regions += [(r, db) for r in _rect_diff(box_b, box_a)]
    inter = _rect_intersect(box_a, box_b)
    if inter is not None:
        regions.append((inter, da + db))
    return regions


# ---------------------------------------------------------------------------
# state mutations, described as small records so deltas can be audited
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AddPatch:
    """Insert a patch at ``index`` with the given cost; the patch currently at
    ``index`` (if any) loses ``cost`` from its own gap."""

    index: int
    start: tuple[int, int]
    length: tuple[int, int]
    cost: float


@dataclass(frozen=True)
class RemovePatch:
    index: int


@dataclass(frozen=True)
class MovePatch:
    index: int
    start: tuple[int, int]
    length: tuple[int, int]


@dataclass(frozen=True)
class ChangeCost:
    index: int
    cost: float


@dataclass(frozen=True)
class SwapRows:
    i: int
    j: int


@dataclass(frozen=True)
class SwapCols:
    i: int
    j: int


class RelationalState:
    """Latent state plus the caches the samplers hammer on.

    Caches: the aggregate-rate field, its squashed log-probabilities, and
    the observations/mask in latent order plus the two mixed layouts the
    permutation moves need. ``loglik`` is maintained incrementally;
    ``coherence_error`` measures drift against a fresh rebuild.
    """

    def __init__(self, R, mask, part: Partition, row_of, col_of, gamma: float):
        R = np.asarray(R)
        if not np.isin(R, (0, 1)).all():
            raise ValueError("R must be binary")
        self.R = R.astype(np.int8)
        self.mask = np.asarray(mask, dtype=bool)
        if self.mask.shape != self.R.shape:
            raise ValueError("mask shape does not match R")
        if tuple(part.shape.dims) != self.R.shape:
            raise ValueError("partition grid does not match R")
        n1, n2 = self.R.shape
        self.row_of = np.asarray(row_of, dtype=np.int64)
        self.col_of = np.asarray(col_of, dtype=np.int64)
        if sorted(self.row_of.tolist()) != list(range(n1)):
            raise ValueError("row_of is not a permutation")
        if sorted(self.col_of.tolist()) != list(range(n2)):
            raise ValueError("col_of is not a permutation")
        if not (gamma > 0):
            raise ValueError("gamma must be positive")
        self.part = part
        self.gamma = float(gamma)
        self.rebuild()

    # -- cache construction -------------------------------------------------

    def rebuild(self):
        """Recompute every cache from first principles."""
        self.agg = rate_field(self.part, self.gamma)
        self.rho = sigma(self.agg)
        self.lp = np.log(self.rho)
        self.lq = np.log1p(-self.rho)
        Rf = self.R.astype(np.float64)
        Mf = self.mask.astype(np.float64)
        self.Rl = Rf[np.ix_(self.row_of, self.col_of)]
        self.Ml = Mf[np.ix_(self.row_of, self.col_of)]
        self.Rrc = Rf[:, self.col_of]
        self.Mrc = Mf[:, self.col_of]
        self.Rcr = Rf[self.row_of, :]
        self.Mcr = Mf[self.row_of, :]
        self.loglik = self._full_ll()

    def _full_ll(self) -> float:
        return float(np.sum(self.Ml * (self.lq + self.Rl * (self.lp - self.lq))))

    def coherence_error(self) -> tuple[float, float]:
        """(max per-cell aggregate drift, log-likelihood drift) vs a rebuild."""
        agg = rate_field(self.part, self.gamma)
        d_agg = float(np.max(np.abs(agg - self.agg))) if agg.size else 0.0
        return d_agg, abs(self.loglik - log_likelihood(self))

    # -- region-level likelihood pieces --------------------------------------

    def _region_ll(self, rect: Rect) -> float:
        sl = _box_slices(*rect)
        m, r = self.Ml[sl], self.Rl[sl]
        return float(np.sum(m * (self.lq[sl] + r * (self.lp[sl] - self.lq[sl]))))

    def _region_ll_shift(self, rect: Rect, dagg: float) -> float:
        sl = _box_slices(*rect)
        rho = sigma(self.agg[sl] + dagg)
        lp, lq = np.log(rho), np.log1p(-rho)
        m, r = self.Ml[sl], self.Rl[sl]
        return float(np.sum(m * (lq + r * (lp - lq))))

    def _delta_regions(self, regions: list[tuple[Rect, float]]) -> float:
        return sum(self._region_ll_shift(r, d) - self._region_ll(r) for r, d in regions)

    def _apply_regions(self, regions: list[tuple[Rect, float]]):
        """Shift the aggregate field region-wise and refresh dependent caches."""
        delta = 0.0
        for rect, d in regions:
            sl = _box_slices(*rect)
            before = self._region_ll(rect)
            self.agg[sl] += d
            rho = sigma(self.agg[sl])
            self.rho[sl] = rho
            self.lp[sl] = np.log(rho)
            self.lq[sl] = np.log1p(-rho)
            delta += self._region_ll(rect) - before
        self.loglik += delta

    # -- patch-level deltas ---------------------------------------------------

    def _patch_box(self, k: int) -> Rect:
        p = self.part.patches[k]
        return (p.start, p.length)

    def _regions_move(self, k: int, start, length) -> list[tuple[Rect, float]]:
        p = self.part.patches[k]
        w_old = p.rate / self.gamma
        w_new = p.cost / (length[0] * length[1]) / self.gamma
        return _two_box_regions((p.start, p.length), -w_old, (tuple(start), tuple(length)), w_new)

    def _regions_cost(self, k: int, cost: float) -> list[tuple[Rect, float]]:
        p = self.part.patches[k]
        return [(self._patch_box(k), (cost - p.cost) / p.volume() / self.gamma)]

    def _regions_add(self, index: int, start, length, cost: float) -> list[tuple[Rect, float]]:
        w_new = cost / (length[0] * length[1]) / self.gamma
        nxt = None
        d_nxt = 0.0
        if index < len(self.part.patches):
            p = self.part.patches[index]
            if cost >= p.cost:
                raise ValueError("inserted cost must be smaller than the split gap")
            nxt = (p.start, p.length)
            d_nxt = -cost / p.volume() / self.gamma
        return _two_box_regions(nxt, d_nxt, (tuple(start), tuple(length)), w_new)

    def _regions_remove(self, index: int) -> list[tuple[Rect, float]]:
        p = self.part.patches[index]
        nxt = None
        d_nxt = 0.0
        if index + 1 < len(self.part.patches):
            q = self.part.patches[index + 1]
            nxt = (q.start, q.length)
            d_nxt = p.cost / q.volume() / self.gamma
        return _two_box_regions((p.start, p.length), -p.rate / self.gamma, nxt, d_nxt)

    # -- permutation deltas ---------------------------------------------------

    def _row_ll(self, i: int) -> float:
        m, r = self.Ml[i], self.Rl[i]
        return float(np.dot(m, self.lq[i] + r * (self.lp[i] - self.lq[i])))

    def _row_ll_as(self, data_row: int, i: int) -> float:
        m, r = self.Mrc[data_row], self.Rrc[data_row]
        return float(np.dot(m, self.lq[i] + r * (self.lp[i] - self.lq[i])))

    def _col_ll(self, j: int) -> float:
        m, r = self.Ml[:, j], self.Rl[:, j]
        return float(np.dot(m, self.lq[:, j] + r * (self.lp[:, j] - self.lq[:, j])))

    def _col_ll_as(self, data_col: int, j: int) -> float:
        m, r = self.Mcr[:, data_col], self.Rcr[:, data_col]
        return float(np.dot(m, self.lq[:, j] + r * (self.lp[:, j] - self.lq[:, j])))

    def delta_swap_rows(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        a, b = self.row_of[i], self.row_of[j]
        return (
            self._row_ll_as(b, i)
            + self._row_ll_as(a, j)
            - self._row_ll(i)
            - self._row_ll(j)
        )

    def delta_swap_cols(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        a, b = self.col_of[i], self.col_of[j]
        return (
            self._col_ll_as(b, i)
            + self._col_ll_as(a, j)
            - self._col_ll(i)
            - self._col_ll(j)
        )

    def apply_swap_rows(self, i: int, j: int):
        if i == j:
            return
        self.loglik += self.delta_swap_rows(i, j)
        self.row_of[[i, j]] = self.row_of[[j, i]]
        for m in (self.Rl, self.Ml, self.Rcr, self.Mcr):
            m[[i, j]] = m[[j, i]]

    def apply_swap_cols(self, i: int, j: int):
        if i == j:
            return
        self.loglik += self.delta_swap_cols(i, j)
        self.col_of[[i, j]] = self.col_of[[j, i]]
        for m in (self.Rl, self.Ml, self.Rrc, self.Mrc):
            m[:, [i, j]] = m[:, [j, i]]


def log_likelihood(state: RelationalState) -> float:
    """Masked Bernoulli log-likelihood, recomputed from scratch (the oracle)."""
    agg = rate_field(state.part, state.gamma)
    rho = sigma(agg)
    lp, lq = np.log(rho), np.log1p(-rho)
    Rl = state.R.astype(np.float64)[np.ix_(state.row_of, state.col_of)]
    Ml = state.mask.astype(np.float64)[np.ix_(state.row_of, state.col_of)]
    return float(np.sum(Ml * (lq + Rl * (lp - lq))))


def delta_log_likelihood(state: RelationalState, change) -> float:
    """Log-likelihood change of a mutation, touching only affected cells."""
    k = len(state.part.patches)
    if isinstance(change, AddPatch):
        if not (0 <= change.index <= k):
            raise IndexError("insertion index out of range")
        return state._delta_regions(
            state._regions_add(change.index, change.start, change.length, change.cost)
        )
    if isinstance(change, RemovePatch):
        if not (0 <= change.index < k):
            raise IndexError("no such patch")
        return state._delta_regions(state._regions_remove(change.index))
    if isinstance(change, MovePatch):
        if not (0 <= change.index < k):
            raise IndexError("no such patch")
        return state._delta_regions(
            state._regions_move(change.index, change.start, change.length)
        )
    if isinstance(change, ChangeCost):
        if not (0 <= change.index < k):
            raise IndexError("no such patch")
        return state._delta_regions(state._regions_cost(change.index, change.cost))
    if isinstance(change, SwapRows):
        return state.delta_swap_rows(change.i, change.j)
    if isinstance(change, SwapCols):
        return state.delta_swap_cols(change.i, change.j)
    raise TypeError(f"unknown change {change!r}")


def apply_change(state: RelationalState, change):
    """Mutate the state in place, keeping every cache coherent."""
    shape = state.part.shape
    if isinstance(change, AddPatch):
        regions = state._regions_add(change.index, change.start, change.length, change.cost)
        state._apply_regions(regions)
        if change.index < len(state.part.patches):
            nxt = state.part.patches[change.index]
            state.part.patches[change.index] = Patch(
                nxt.start, nxt.length, nxt.cost - change.cost, shape
            )
        state.part.patches.insert(
            change.index, Patch(change.start, change.length, change.cost, shape)
        )
    elif isinstance(change, RemovePatch):
        regions = state._regions_remove(change.index)
        state._apply_regions(regions)
        gone = state.part.patches.pop(change.index)
        if change.index < len(state.part.patches):
            nxt = state.part.patches[change.index]
            state.part.patches[change.index] = Patch(
                nxt.start, nxt.length, nxt.cost + gone.cost, shape
            )
    elif isinstance(change, MovePatch):
        regions = state._regions_move(change.index, change.start, change.length)
        state._apply_regions(regions)
        old = state.part.patches[change.index]
        state.part.patches[change.index] = Patch(
            change.start, change.length, old.cost, shape
        )
    elif isinstance(change, ChangeCost):
        regions = state._regions_cost(change.index, change.cost)
        state._apply_regions(regions)
        old = state.part.patches[change.index]
        state.part.patches[change.index] = Patch(old.start, old.length, change.cost, shape)
    elif isinstance(change, SwapRows):
        state.apply_swap_rows(change.i, change.j)
    elif isinstance(change, SwapCols):
        state.apply_swap_cols(change.i, change.j)
    else:
        raise TypeError(f"unknown change {change!r}")


@dataclass(frozen=True)
class PosteriorSample:
    """One retained draw: the partition plus both permutations."""

    part: Partition
    row_of: np.ndarray
    col_of: np.ndarray
    gamma: float


def snapshot(state: RelationalState) -> PosteriorSample:
    return PosteriorSample(
        Partition(state.part.shape, list(state.part.patches), state.part.tau),
        state.row_of.copy(),
        state.col_of.copy(),
        state.gamma,
    )


def sample_relations(
    part: Partition, row_of, col_of, gamma: float, rng: np.random.Generator
) -> np.ndarray:
    """Draw a binary relation matrix from the latent intensity field."""
    rho = sigma(rate_field(part, gamma))
    latent = (rng.random(part.shape.dims) < rho).astype(np.int8)
    r = np.empty(part.shape.dims, dtype=np.int8)
    r[np.ix_(np.asarray(row_of), np.asarray(col_of))] = latent
    return r


def generate_synthetic(
    shape: ArrayShape,
    hp: HyperParams,
    rng: np.random.Generator,
    identity_perms: bool = False,
) -> tuple[np.ndarray, RelationalState]:
    """Prior partition + uniform permutations + Bernoulli relations.

    Returns the observed matrix and the ground-truth state (all cells
    masked in).
    """
    if shape.ndim != 2:
        raise ValueError("the relational model is 2-D")
    part = sample_partition_direct(shape, hp, rng)
    n1, n2 = shape.dims
    if identity_perms:
        row_of, col_of = np.arange(n1), np.arange(n2)
    else:
        row_of, col_of = rng.permutation(n1), rng.permutation(n2)
    r = sample_relations(part, row_of, col_of, hp.gamma, rng)
    state = RelationalState(r, np.ones(shape.dims, dtype=bool), part, row_of, col_of, hp.gamma)
    return r, state


def predict(samples, pairs) -> np.ndarray:
    """Posterior-mean intensity for (data-row, data-col) pairs, 0-based.

    ``samples`` is a PosteriorSample list, a single PosteriorSample, or a
    RelationalState.
    """
    if isinstance(samples, RelationalState):
        samples = [snapshot(samples)]
    elif isinstance(samples, PosteriorSample):
        samples = [samples]
    if len(samples) == 0:
        raise ValueError("no posterior samples to predict from")
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("pairs must be an (n, 2) array")
    n1, n2 = samples[0].part.shape.dims
    if pairs[:, 0].min(initial=0) < 0 or pairs[:, 0].max(initial=0) >= n1:
        raise IndexError("row id out of range")
    if pairs[:, 1].min(initial=0) < 0 or pairs[:, 1].max(initial=0) >= n2:
        raise IndexError("col id out of range")
    scores = np.zeros(len(pairs))
    for s in samples:
        rho = sigma(rate_field(s.part, s.gamma))
        inv_r = np.argsort(s.row_of)
        inv_c = np.argsort(s.col_of)
        scores += rho[inv_r[pairs[:, 0]], inv_c[pairs[:, 1]]]
    return scores / len(samples)
