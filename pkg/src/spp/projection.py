"""Restriction of partitions to sub-arrays and the self-consistency checks.

The restriction operator keeps patch content inside the sub-array and
drops the rest; the checks verify, exactly and by Monte Carlo, that a
restricted draw is distributed as a direct draw on the sub-array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .grid import ArrayShape, Partition, Patch
from .prior import (
    HyperParams,
    candidate_pmf,
    direct_pmf,
    nonempty_prob,
    sample_partition_candidate,
    sample_partition_direct,
)

__all__ = [
    "SubArraySpec",
    "project_patch",
    "project_partition",
    "crossing_prob",
    "check_intensity_equality",
    "projected_position_pmf",
    "check_self_consistency_mc",
    "CheckReport",
]

SIGNIFICANCE = 0.01


@dataclass(frozen=True)
class SubArraySpec:
    """A contiguous axis-aligned sub-array X of an outer array Y.

    ``offset[d]`` counts the cells of Y preceding X in dimension d, so X
    covers Y-positions offset[d]+1 .. offset[d]+inner_dims[d].
    """

    outer: ArrayShape
    offset: tuple[int, ...]
    inner_dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "offset", tuple(int(o) for o in self.offset))
        object.__setattr__(self, "inner_dims", tuple(int(n) for n in self.inner_dims))
        if len(self.offset) != self.outer.ndim or len(self.inner_dims) != self.outer.ndim:
            raise ValueError("offset/inner rank does not match the outer shape")
        for o, nx, ny in zip(self.offset, self.inner_dims, self.outer.dims):
            if o < 0 or nx < 1 or o + nx > ny:
                raise ValueError(f"sub-array slice [{o + 1}, {o + nx}] not inside 1..{ny}")

    @property
    def inner(self) -> ArrayShape:
        return ArrayShape(self.inner_dims)


def _project_box(
    start: tuple[int, ...], length: tuple[int, ...], spec: SubArraySpec
) -> tuple[tuple[int, ...], tuple[int, ...]] | None:
    """Intersect a box with the sub-array, re-expressed in X coordinates."""
    new_s, new_l = [], []
    for d in range(spec.outer.ndim):
        lo = max(start[d], spec.offset[d] + 1)
        hi = min(start[d] + length[d] - 1, spec.offset[d] + spec.inner_dims[d])
        if lo > hi:
            return None
        new_s.append(lo - spec.offset[d])
        new_l.append(hi - lo + 1)
    return tuple(new_s), tuple(new_l)


def project_patch(p: Patch, spec: SubArraySpec) -> Patch | None:
    """Restrict one patch to the sub-array; None if the intersection is empty.

    The cost rides along unchanged; partition-level projection reconciles
    costs from the surviving generating times.
    """
    box = _project_box(p.start, p.length, spec)
    if box is None:
        return None
    return Patch(box[0], box[1], p.cost, spec.inner)


def project_partition(part: Partition, spec: SubArraySpec) -> Partition:
    """Restrict a partition: drop non-crossing patches, recompute cost gaps
    from the survivors' original generating times (a survivor absorbs the
    gaps of the dropped patches before it, which is the same thing)."""
    patches = []
    carry = 0.0
    for p in part.patches:
        box = _project_box(p.start, p.length, spec)
        if box is None:
            carry += p.cost
        else:
            patches.append(Patch(box[0], box[1], carry + p.cost, spec.inner))
            carry = 0.0
    return Partition(spec.inner, patches, part.tau)


def _crossing_prob_dim(n_y: int, n_x: int, offset: int, theta: float) -> float:
    """P(a candidate side on Y projects to a nonempty side on X)."""
    if n_x == n_y:
        return (theta + (1.0 - theta) * n_y) / n_y
    if offset == 0:
        # shared initial boundary
        return 1.0 / n_y + (n_x - 1) * (1.0 - theta) / n_y
    # shared terminal boundary; the interior case telescopes to the same form
    return theta / n_y + n_x * (1.0 - theta) / n_y


def crossing_prob(spec: SubArraySpec, theta: float) -> float:
    """P(S of the projected candidate > 0), product over dimensions."""
    p = 1.0
    for d in range(spec.outer.ndim):
        p *= _crossing_prob_dim(
            spec.outer.dims[d], spec.inner_dims[d], spec.offset[d], theta
        )
    return p


@dataclass
class CheckReport:
    """Machine-readable outcome of a verification suite."""

    name: str
    cases: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.cases)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "cases": self.cases}


def check_intensity_equality(
    specs: list[SubArraySpec], thetas: list[float], rel_tol: float = 1e-12
) -> CheckReport:
    """Closed-form check that the projected and direct thinned Poisson
    intensities agree: S_Y * P(crossing) == S_X * P(nonempty on X)."""
    report = CheckReport("intensity_equality")
    for spec in specs:
        for theta in thetas:
            lhs = spec.outer.volume() * crossing_prob(spec, theta)
            rhs = spec.inner.volume() * nonempty_prob(spec.inner, theta)
            rel = abs(lhs - rhs) / max(abs(rhs), 1e-300)
            report.cases.append(
                {
                    "outer": list(spec.outer.dims),
                    "inner": list(spec.inner_dims),
                    "offset": list(spec.offset),
                    "theta": theta,
                    "lhs": lhs,
                    "rhs": rhs,
                    "rel_diff": rel,
                    "passed": bool(rel < rel_tol),
                }
            )
    return report


def projected_position_pmf(spec: SubArraySpec, theta: float, d: int) -> np.ndarray:
    """Exact pmf of the projected side in dimension d, given it is nonempty.

    Summed over all candidate pre-images on Y. Indexed [s-1, l-1] in X
    coordinates. X must share the initial or terminal boundary of Y in
    dimension d; handle interior sub-arrays by composing one
    shared-initial and one shared-terminal projection.
    """
    n_y, n_x, off = spec.outer.dims[d], spec.inner_dims[d], spec.offset[d]
    if 0 < off and off + n_x < n_y:
        raise ValueError(
            "sub-array is interior in the queried dimension; "
            "compose two single-sided projections instead"
        )
    cand = candidate_pmf(n_y, theta)
    pmf = np.zeros((n_x, n_x))
    for s in range(1, n_y + 1):
        for l in range(1, n_y - s + 2):
            lo = max(s, off + 1)
            hi = min(s + l - 1, off + n_x)
            if lo <= hi:
                pmf[lo - off - 1, hi - lo] += cand[s - 1, l]
    total = pmf.sum()
    return pmf / total


def _pool_counts(
    counts_a: np.ndarray, counts_b: np.ndarray, min_total: int = 10
) -> tuple[np.ndarray, np.ndarray]:
    """Merge sparse categories (ascending total) so a contingency test is valid."""
    order = np.argsort(counts_a + counts_b)
    a, b = counts_a[order].astype(float), counts_b[order].astype(float)
    pooled_a, pooled_b = [], []
    acc_a = acc_b = 0.0
    for x, y in zip(a, b):
        acc_a += x
        acc_b += y
        if acc_a + acc_b >= min_total:
            pooled_a.append(acc_a)
            pooled_b.append(acc_b)
            acc_a = acc_b = 0.0
    if acc_a + acc_b > 0 and pooled_a:
        pooled_a[-1] += acc_a
        pooled_b[-1] += acc_b
    return np.array(pooled_a), np.array(pooled_b)


def _chi2_two_sample(counts_a: np.ndarray, counts_b: np.ndarray) -> float:
    a, b = _pool_counts(counts_a, counts_b)
    if len(a) < 2:
        return 1.0
    _, p, _, _ = stats.chi2_contingency(np.vstack([a, b]))
    return float(p)


def _chi2_one_sample(counts: np.ndarray, pmf: np.ndarray, min_expected: float = 5.0) -> float:
    """One-sample chi-square against an exact pmf, pooling thin cells."""
    counts = counts.astype(float).ravel()
    pmf = pmf.ravel()
    n = counts.sum()
    order = np.argsort(pmf)
    obs, exp = [], []
    acc_o = acc_e = 0.0
    for i in order:
        acc_o += counts[i]
        acc_e += pmf[i] * n
        if acc_e >= min_expected:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and obs:
        obs[-1] += acc_o
        exp[-1] += acc_e
    obs, exp = np.array(obs), np.array(exp)
    if len(obs) < 2:
        return 1.0
    exp *= obs.sum() / exp.sum()
    _, p = stats.chisquare(obs, exp)
    return float(p)


def _mc_chunk(args):
    """One worker chunk: `count` projected draws then `count` direct draws.

    Each chunk owns a spawned child stream, so the pooled result is
    identical for any worker count.
    """
    spec, hp, count, corrupt, rng = args
    inner = spec.inner
    ndim = inner.ndim
    k_proj, k_dir, m_proj, m_dir = [], [], [], []
    pos_proj = [np.zeros((n, n), dtype=np.int64) for n in inner.dims]
    pos_dir = [np.zeros((n, n), dtype=np.int64) for n in inner.dims]
    for _ in range(count):
        part = sample_partition_candidate(spec.outer, hp, rng)
        proj = project_partition(part, spec)
        if corrupt:
            k_proj.append(len(part))
            m_proj.append(sum(p.cost for p in part.patches))
        else:
            k_proj.append(len(proj))
            m_proj.append(sum(p.cost for p in proj.patches))
        for p in proj.patches:
            for d in range(ndim):
                pos_proj[d][p.start[d] - 1, p.length[d] - 1] += 1
    for _ in range(count):
        part = sample_partition_direct(inner, hp, rng)
        k_dir.append(len(part))
        m_dir.append(sum(p.cost for p in part.patches))
        for p in part.patches:
            for d in range(ndim):
                pos_dir[d][p.start[d] - 1, p.length[d] - 1] += 1
    return k_proj, k_dir, m_proj, m_dir, pos_proj, pos_dir


def check_self_consistency_mc(
    spec: SubArraySpec,
    hp: HyperParams,
    draws: int,
    rng: np.random.Generator,
    corrupt_keep_empties: bool = False,
    workers: int = 1,
    chunk_size: int = 500,
) -> CheckReport:
    """Monte-Carlo comparison of project-then-restrict draws against direct draws.

    Compares the nonempty-count law (chi-square), per-dimension (s, l)
    marginals against the exact pmfs (chi-square), and the total-cost law
    (two-sample KS). ``corrupt_keep_empties`` is the documented negative
    control: the projection bookkeeping then skips the drop step, so the
    count test must fail. Draws are chunked onto per-chunk child streams,
    so the report is byte-identical for any ``workers`` value.
    """
    if draws < 1_000:
        raise ValueError("need at least 1000 draws for the distributional tests")
    inner = spec.inner
    ndim = inner.ndim

    counts = [chunk_size] * (draws // chunk_size)
    if draws % chunk_size:
        counts.append(draws % chunk_size)
    streams = rng.spawn(len(counts))
    tasks = [(spec, hp, c, corrupt_keep_empties, s) for c, s in zip(counts, streams)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_mc_chunk, tasks))
    else:
        parts = [_mc_chunk(t) for t in tasks]

    k_proj, k_dir, m_proj, m_dir = [], [], [], []
    pos_proj = [np.zeros((n, n), dtype=np.int64) for n in inner.dims]
    pos_dir = [np.zeros((n, n), dtype=np.int64) for n in inner.dims]
    for kp, kd, mp, md, pp, pd in parts:
        k_proj += kp
        k_dir += kd
        m_proj += mp
        m_dir += md
        for d in range(ndim):
            pos_proj[d] += pp[d]
            pos_dir[d] += pd[d]

    kmax = max(max(k_proj), max(k_dir))
    k_proj_counts = np.bincount(k_proj, minlength=kmax + 1)
    k_dir_counts = np.bincount(k_dir, minlength=kmax + 1)

    report = CheckReport("self_consistency_mc")
    p_k = _chi2_two_sample(k_proj_counts, k_dir_counts)
    report.cases.append(
        {"test": "count_chi2", "p_value": p_k, "passed": bool(p_k > SIGNIFICANCE)}
    )
    for d in range(ndim):
        exact = projected_position_pmf(spec, hp.theta, d)
        p_pos = _chi2_one_sample(pos_proj[d], exact)
        report.cases.append(
            {
                "test": f"projected_position_chi2_dim{d}",
                "p_value": p_pos,
                "passed": bool(p_pos > SIGNIFICANCE),
            }
        )
        p_dirpos = _chi2_one_sample(pos_dir[d], direct_pmf(inner.dims[d], hp.theta))
        report.cases.append(
            {
                "test": f"direct_position_chi2_dim{d}",
                "p_value": p_dirpos,
                "passed": bool(p_dirpos > SIGNIFICANCE),
            }
        )
    p_m = float(stats.ks_2samp(m_proj, m_dir).pvalue)
    report.cases.append(
        {"test": "cost_sum_ks", "p_value": p_m, "passed": bool(p_m > SIGNIFICANCE)}
    )
    return report
