"""Posterior sampler for the relational model.

One iteration runs, in order: a birth/death proposal for the patch
count, a cost Metropolis step per patch, a conditional-SMC re-draw of
every patch's position, then multiple-try Metropolis sweeps over the
row and column permutations.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .grid import ArrayShape, Partition, Patch, time_points
from .prior import HyperParams, length_pmf, nonempty_prob, start_pmf, _sample_direct
from .relmodel import (
    AddPatch,
    ChangeCost,
    MovePatch,
    PosteriorSample,
    RelationalState,
    RemovePatch,
    apply_change,
    delta_log_likelihood,
    log_likelihood,
    sigma,
    snapshot,
    _box_slices,
)

__all__ = [
    "SmcConfig",
    "MtmConfig",
    "ChainConfig",
    "ChainResult",
    "poisson_rate",
    "move_birth_death",
    "move_cost",
    "move_patch_csmc",
    "move_perm_mtm",
    "joint_log_density",
    "run_chain",
]

ALL_MOVES = ("birth_death", "cost", "patch", "perm_row", "perm_col")


@dataclass(frozen=True)
class SmcConfig:
    """Conditional-SMC settings: particle count C and stage count I.

    ``stages=None`` resolves to ceil(max-grid-side / 2); note lengths
    beyond stages+1 are then unreachable within one sweep, so exactness
    tests should pass stages >= the grid side.
    """

    particles: int = 5
    stages: int | None = None

    def __post_init__(self):
        if self.particles < 2:
            raise ValueError("need at least 2 particles (particle 1 is the clamp)")
        if self.stages is not None and self.stages < 1:
            raise ValueError("need at least one stage")

    def resolve_stages(self, shape: ArrayShape) -> int:
        if self.stages is not None:
            return self.stages
        return math.ceil(max(shape.dims) / 2)


@dataclass(frozen=True)
class MtmConfig:
    proposals: int = 5

    def __post_init__(self):
        if self.proposals < 1:
            raise ValueError("need at least one proposal")


@dataclass
class ChainConfig:
    iterations: int
    hp: HyperParams = field(default_factory=HyperParams)
    smc: SmcConfig = field(default_factory=SmcConfig)
    mtm: MtmConfig = field(default_factory=MtmConfig)
    intensity_scale: float | None = None
    seed: int = 0
    burn_in: int | None = None
    thin: int = 10
    checkpoint_every: int | None = None
    enabled_moves: tuple[str, ...] = ALL_MOVES
    coherence_every: int = 100

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        unknown = set(self.enabled_moves) - set(ALL_MOVES)
        if unknown:
            raise ValueError(f"unknown moves: {sorted(unknown)}")


@dataclass
class ChainResult:
    samples: list[PosteriorSample]
    trace: list[dict]
    acceptance: dict[str, tuple[int, int]]


def poisson_rate(hp: HyperParams, shape: ArrayShape, intensity_scale: float | None = None) -> float:
    """Birth intensity lambda: gamma * S_X * P(nonempty) unless overridden."""
    if intensity_scale is not None:
        return intensity_scale
    return hp.gamma * shape.volume() * nonempty_prob(shape, hp.theta)


def _mh_accept(rng: np.random.Generator, log_alpha: float) -> bool:
    return math.log(rng.random() + 1e-300) < log_alpha


def _logsumexp(values) -> float:
    """Plain log-sum-exp; scipy's has ~100x call overhead at this size."""
    m = max(values)
    return m + math.log(sum(math.exp(v - m) for v in values))


@lru_cache(maxsize=128)
def _start_cdf(n: int, theta: float) -> np.ndarray:
    return np.cumsum(start_pmf(n, theta))


def move_birth_death(
    state: RelationalState, hp: HyperParams, lam: float, rng: np.random.Generator
) -> tuple[str, bool]:
    """Propose adding (w.p. p_birth) or removing a patch; returns (kind, accepted)."""
    part = state.part
    k_cur = len(part.patches)
    if rng.random() < hp.p_birth:
        s, l = _sample_direct(part.shape.dims, hp.theta, 1, rng)
        start, length = tuple(int(v) for v in s[0]), tuple(int(v) for v in l[0])
        t_star = part.tau * (1.0 - rng.random())
        times = time_points(part)
        idx = int(np.searchsorted(times, t_star))
        prev_t = float(times[idx - 1]) if idx > 0 else 0.0
        cost = t_star - prev_t
        if cost <= 0.0 or (idx < k_cur and cost >= part.patches[idx].cost):
            return "birth", False  # float tie; measure-zero
        change = AddPatch(idx, start, length, cost)
        dll = delta_log_likelihood(state, change)
        log_alpha = (
            dll
            + math.log(part.tau * lam / (k_cur + 1))
            + math.log((1.0 - hp.p_birth) / hp.p_birth)
        )
        if _mh_accept(rng, log_alpha):
            apply_change(state, change)
            return "birth", True
        return "birth", False
    if k_cur == 0:
        return "death", False
    k = int(rng.integers(k_cur))
    change = RemovePatch(k)
    dll = delta_log_likelihood(state, change)
    log_alpha = (
        dll
        + math.log(k_cur / (part.tau * lam))
        + math.log(hp.p_birth / (1.0 - hp.p_birth))
    )
    if _mh_accept(rng, log_alpha):
        apply_change(state, change)
        return "death", True
    return "death", False


def move_cost(
    state: RelationalState, k: int, lam: float, rng: np.random.Generator
) -> bool:
    """Truncated-exponential proposal for patch k's cost, MH-corrected."""
    part = state.part
    if not (0 <= k < len(part.patches)):
        raise IndexError("no such patch")
    p = part.patches[k]
    bound = part.tau - (sum(q.cost for q in part.patches) - p.cost)
    u = rng.random()
    z = -math.expm1(-lam * bound)
    m_star = -math.log1p(-u * z) / lam
    if m_star <= 0.0 or m_star > bound:
        return False  # float underflow at the interval edge
    change = ChangeCost(k, m_star)
    log_alpha = delta_log_likelihood(state, change) + lam * (m_star - p.cost)
    if _mh_accept(rng, log_alpha):
        apply_change(state, change)
        return True
    return False


def _systematic_indices(weights: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: ``count`` ancestor indices from one uniform."""
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    pos = (np.arange(count) + rng.random()) / count
    return np.searchsorted(cum, pos, side="right")


def _conditional_systematic(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Ancestors for slots 2..C given slot 1 pinned to ancestor 0 (systematic).

    Naively drawing C-1 systematic strata is not a valid conditional
    resampling (the stratum-to-slot map is deterministic, so low slots can
    never copy low ancestors within a stage, which biases the kernel).
    This is the proper construction: draw the offset size-biased by how
    many strata land in ancestor 0's weight segment, remove one uniformly
    chosen such stratum (it is the pinned slot's), and hand the remaining
    C-1 ancestors to slots 2..C in uniformly random order.
    """
    c = len(weights)
    w = np.maximum(weights, 1e-280)
    w /= w.sum()
    x = c * w[0]
    m = math.floor(x)
    f = x - m
    if rng.random() * x < f * (m + 1):
        u = rng.random() * f
    else:
        u = f + rng.random() * (1.0 - f)
    cum = np.cumsum(w)
    cum[-1] = 1.0
    anc = np.searchsorted(cum, (np.arange(c) + u) / c, side="right")
    in_seg = np.flatnonzero(anc == 0)
    drop = in_seg[int(rng.integers(len(in_seg)))]
    rest = np.delete(anc, drop)
    return rest[rng.permutation(c - 1)]


def clamp_lengths(length: tuple[int, int], stage: int) -> tuple[int, int]:
    """Reference-trajectory side-lengths at a stage: one cell per stage and
    dimension until the patch's current length."""
    return min(length[0], 1 + stage), min(length[1], 1 + stage)


def clamp_stopped(start, length, dims, stage: int, d: int) -> bool:
    """Whether the reference trajectory's dimension d has stopped by ``stage``.

    A non-boundary side of length l consumes its stop trial at stage l; a
    side ending on the array boundary stops when it hits it, one stage
    earlier, consuming no trial.
    """
    at_boundary = start[d] + length[d] - 1 == dims[d]
    return stage >= (length[d] - 1 if at_boundary else length[d])


def move_patch_csmc(
    state: RelationalState,
    k: int,
    hp: HyperParams,
    smc: SmcConfig,
    rng: np.random.Generator,
) -> int:
    """Re-draw patch k's position with a conditional-SMC sweep.

    Particle 1 is clamped to the deterministic growth embedding of the
    current patch (one cell per stage and dimension until its current
    side-length, boundary stops consuming no trial); the rest grow from
    start_pmf draws under the prior. Weights are incremental likelihood
    ratios; stage 0 weighs the 1-cell initial states against the
    patch-removed baseline. Returns the selected particle index.
    """
    part = state.part
    if not (0 <= k < len(part.patches)):
        raise IndexError("no such patch")
    p = part.patches[k]
    dims = part.shape.dims
    c_n = smc.particles
    n_stages = smc.resolve_stages(part.shape)
    gam = state.gamma
    cost = p.cost

    # Baseline field with patch k lifted out; per-cell baseline log-likelihood
    # prefix-summed so box scores are O(area of the box) overall.
    bg = state.agg.copy()
    bg[_box_slices(p.start, p.length)] -= p.rate / gam
    np.maximum(bg, 0.0, out=bg)
    rho = sigma(bg)
    lp, lq = np.log(rho), np.log1p(-rho)
    cell = state.Ml * (lq + state.Rl * (lp - lq))
    prefix = np.zeros((dims[0] + 1, dims[1] + 1))
    prefix[1:, 1:] = cell.cumsum(axis=0).cumsum(axis=1)

    def score(s1, s2, l1, l2) -> float:
        """Box log-likelihood relative to the baseline."""
        w = cost / (l1 * l2) / gam
        sl = (slice(s1 - 1, s1 - 1 + l1), slice(s2 - 1, s2 - 1 + l2))
        r = sigma(bg[sl] + w)
        a, b = np.log(r), np.log1p(-r)
        with_patch = float(np.sum(state.Ml[sl] * (b + state.Rl[sl] * (a - b))))
        base = (
            prefix[s1 - 1 + l1, s2 - 1 + l2]
            - prefix[s1 - 1, s2 - 1 + l2]
            - prefix[s1 - 1 + l1, s2 - 1]
            + prefix[s1 - 1, s2 - 1]
        )
        return with_patch - float(base)

    starts = np.empty((c_n, 2), dtype=np.int64)
    lens = np.ones((c_n, 2), dtype=np.int64)
    stopped = np.zeros((c_n, 2), dtype=bool)
    starts[0] = p.start
    for d in (0, 1):
        u = rng.random(c_n - 1)
        cdf = _start_cdf(dims[d], hp.theta)
        starts[1:, d] = np.minimum(np.searchsorted(cdf, u, side="right"), dims[d] - 1) + 1
    for c in range(c_n):
        for d in (0, 1):
            stopped[c, d] = starts[c, d] == dims[d]
    stopped[0] = [clamp_stopped(p.start, p.length, dims, 0, d) for d in (0, 1)]

    lrel = np.array([score(starts[c, 0], starts[c, 1], lens[c, 0], lens[c, 1]) for c in range(c_n)])
    logw = lrel.copy()  # stage-0 weight: initial state vs baseline

    for stage in range(0, n_stages + 1):
        if stage > 0:
            starts[0] = p.start
            old_clamp = lens[0].copy()
            lens[0] = clamp_lengths(p.length, stage)
            stopped[0] = [clamp_stopped(p.start, p.length, dims, stage, d) for d in (0, 1)]
            grow_u = rng.random((c_n - 1, 2))
            changed = np.zeros(c_n, dtype=bool)
            changed[0] = bool(np.any(lens[0] != old_clamp))
            for c in range(1, c_n):
                for d in (0, 1):
                    if stopped[c, d]:
                        continue
                    if grow_u[c - 1, d] < hp.theta:
                        lens[c, d] += 1
                        changed[c] = True
                        if starts[c, d] + lens[c, d] - 1 == dims[d]:
                            stopped[c, d] = True
                    else:
                        stopped[c, d] = True
            logw = np.zeros(c_n)
            for c in range(c_n):
                if changed[c]:
                    new = score(starts[c, 0], starts[c, 1], lens[c, 0], lens[c, 1])
                    logw[c] = new - lrel[c]
                    lrel[c] = new
        wbar = np.exp(logw - logw.max())
        wbar /= wbar.sum()
        if stage < n_stages:
            anc = _conditional_systematic(wbar, rng)
            starts[1:] = starts[anc]
            lens[1:] = lens[anc]
            stopped[1:] = stopped[anc]
            lrel[1:] = lrel[anc]
        else:
            pick = int(
                np.searchsorted(np.cumsum(wbar), rng.random(), side="right").clip(0, c_n - 1)
            )
    new_box = (tuple(int(v) for v in starts[pick]), tuple(int(v) for v in lens[pick]))
    apply_change(state, MovePatch(k, new_box[0], new_box[1]))
    return pick


def move_perm_mtm(
    state: RelationalState, axis: str, mtm: MtmConfig, rng: np.random.Generator
) -> tuple[int, int]:
    """One multiple-try sweep over all indices of an axis; returns (accepts, tries).

    For each index: Z uniform swap partners, weights are the swapped-state
    likelihood ratios, one partner selected in proportion; the reverse set
    is Z-1 fresh partners plus the index that undoes the swap, and the
    exchange is accepted with min(1, sum-forward / sum-reverse).
    """
    if axis == "row":
        n = state.R.shape[0]
        delta, swap = state.delta_swap_rows, state.apply_swap_rows
    elif axis == "col":
        n = state.R.shape[1]
        delta, swap = state.delta_swap_cols, state.apply_swap_cols
    else:
        raise ValueError("axis must be 'row' or 'col'")
    z_n = mtm.proposals
    accepted = 0
    for i in range(n):
        cand = rng.integers(0, n, size=z_n)
        fwd = [delta(i, int(c)) for c in cand]
        peak = max(fwd)
        w = [math.exp(v - peak) for v in fwd]
        u = rng.random() * sum(w)
        pick = z_n - 1
        running = 0.0
        for z, wv in enumerate(w):
            running += wv
            if u < running:
                pick = z
                break
        i_star = int(cand[pick])
        swap(i, i_star)  # tentative move to the exchanged state
        rev_idx = list(rng.integers(0, n, size=z_n - 1)) + [i_star]
        rev = [delta(i, int(c)) for c in rev_idx]
        log_alpha = _logsumexp(fwd) - _logsumexp(rev)
        if _mh_accept(rng, log_alpha):
            accepted += 1
        else:
            swap(i, i_star)
    return accepted, n


def joint_log_density(state: RelationalState, hp: HyperParams, lam: float) -> float:
    """Log of likelihood x permutation prior x count/time density x position priors."""
    part = state.part
    total = log_likelihood(state)
    n1, n2 = state.R.shape
    total -= float(gammaln(n1 + 1) + gammaln(n2 + 1))
    total += len(part.patches) * math.log(lam) - part.tau * lam
    with np.errstate(divide="ignore"):
        for p in part.patches:
            for d in range(part.shape.ndim):
                n = part.shape.dims[d]
                total += float(np.log(start_pmf(n, hp.theta)[p.start[d] - 1]))
                total += float(np.log(length_pmf(n, p.start[d], hp.theta)[p.length[d] - 1]))
    return total


def run_chain(
    r_matrix,
    mask,
    cfg: ChainConfig,
    rng: np.random.Generator | None = None,
    init: PosteriorSample | None = None,
    checkpoint_cb=None,
) -> ChainResult:
    """Run the full sampler; returns thinned posterior samples and a trace.

    The chain starts from an empty partition and identity permutations
    unless ``init`` supplies a state. One seed fixes every draw.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    r_matrix = np.asarray(r_matrix)
    shape = ArrayShape(r_matrix.shape)
    hp = cfg.hp
    if init is None:
        part = Partition(shape, [], hp.tau)
        row_of = np.arange(r_matrix.shape[0])
        col_of = np.arange(r_matrix.shape[1])
    else:
        part = Partition(shape, list(init.part.patches), init.part.tau)
        row_of = init.row_of.copy()
        col_of = init.col_of.copy()
    state = RelationalState(r_matrix, mask, part, row_of, col_of, hp.gamma)
    lam = poisson_rate(hp, shape, cfg.intensity_scale)
    burn = cfg.iterations // 5 if cfg.burn_in is None else cfg.burn_in

    acc = {m: [0, 0] for m in ("birth", "death", "cost", "mtm_row", "mtm_col")}
    trace: list[dict] = []
    samples: list[PosteriorSample] = []
    t0 = time.perf_counter()

    def rate(name: str) -> float:
        tries = acc[name][1]
        return acc[name][0] / tries if tries else 0.0

    for it in range(1, cfg.iterations + 1):
        if "birth_death" in cfg.enabled_moves:
            kind, ok = move_birth_death(state, hp, lam, rng)
            acc[kind][0] += int(ok)
            acc[kind][1] += 1
        if "cost" in cfg.enabled_moves:
            for k in range(len(state.part.patches)):
                ok = move_cost(state, k, lam, rng)
                acc["cost"][0] += int(ok)
                acc["cost"][1] += 1
        if "patch" in cfg.enabled_moves:
            for k in range(len(state.part.patches)):
                move_patch_csmc(state, k, hp, cfg.smc, rng)
        if "perm_row" in cfg.enabled_moves:
            a, t = move_perm_mtm(state, "row", cfg.mtm, rng)
            acc["mtm_row"][0] += a
            acc["mtm_row"][1] += t
        if "perm_col" in cfg.enabled_moves:
            a, t = move_perm_mtm(state, "col", cfg.mtm, rng)
            acc["mtm_col"][0] += a
            acc["mtm_col"][1] += t

        if cfg.coherence_every and it % cfg.coherence_every == 0:
            d_agg, d_ll = state.coherence_error()
            if d_agg > 1e-9 or d_ll > 1e-6:
                raise RuntimeError(f"cache drift at iteration {it}: {d_agg}, {d_ll}")
            state.rebuild()

        trace.append(
            {
                "iter": it,
                "loglik_train": state.loglik,
                "K": len(state.part.patches),
                "accept_birth": rate("birth"),
                "accept_death": rate("death"),
                "accept_cost": rate("cost"),
                "accept_mtm_row": rate("mtm_row"),
                "accept_mtm_col": rate("mtm_col"),
                "wallclock_s": time.perf_counter() - t0,
            }
        )
        if it > burn and (it - burn) % cfg.thin == 0:
            samples.append(snapshot(state))
        if checkpoint_cb and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            checkpoint_cb(it, state)

    return ChainResult(samples, trace, {k: tuple(v) for k, v in acc.items()})
