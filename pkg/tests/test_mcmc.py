import math

import numpy as np
import pytest
from scipy import stats

from spp.grid import ArrayShape, Partition, Patch
from spp.prior import HyperParams, direct_pmf
from spp.mcmc import (
    ChainConfig,
    MtmConfig,
    SmcConfig,
    clamp_lengths,
    clamp_stopped,
    joint_log_density,
    move_birth_death,
    move_cost,
    move_patch_csmc,
    move_perm_mtm,
    poisson_rate,
    run_chain,
)
from spp.relmodel import (
    AddPatch,
    PosteriorSample,
    RelationalState,
    apply_change,
    delta_log_likelihood,
    sample_relations,
)


def flat_state(n, part=None, gamma=0.2, tau=1.0):
    """All cells masked out: the likelihood is flat."""
    shape = ArrayShape((n, n))
    if part is None:
        part = Partition(shape, [], tau)
    return RelationalState(
        np.zeros((n, n), dtype=np.int8),
        np.zeros((n, n), dtype=bool),
        part,
        np.arange(n),
        np.arange(n),
        gamma,
    )


def pooled_chisquare(counts, pmf, min_expected=5.0):
    counts = np.asarray(counts, dtype=float).ravel()
    pmf = np.asarray(pmf, dtype=float).ravel()
    exp = pmf * counts.sum()
    order = np.argsort(pmf)
    obs_p, exp_p, acc_o, acc_e = [], [], 0.0, 0.0
    for i in order:
        acc_o += counts[i]
        acc_e += exp[i]
        if acc_e >= min_expected:
            obs_p.append(acc_o)
            exp_p.append(acc_e)
            acc_o = acc_e = 0.0
    obs_p[-1] += acc_o
    exp_p[-1] += acc_e
    exp_p = np.asarray(exp_p) * (np.sum(obs_p) / np.sum(exp_p))
    return stats.chisquare(obs_p, exp_p).pvalue


class TestClampEmbedding:
    def test_growth_schedule_3_by_1(self):
        assert clamp_lengths((3, 1), 0) == (1, 1)
        assert clamp_lengths((3, 1), 1) == (2, 1)
        assert clamp_lengths((3, 1), 2) == (3, 1)
        assert clamp_lengths((3, 1), 7) == (3, 1)

    def test_stop_stages_interior(self):
        start, length, dims = (2, 2), (3, 1), (8, 8)
        # dimension 1 (length 1) consumes its stop trial at stage 1
        assert not clamp_stopped(start, length, dims, 0, 1)
        assert clamp_stopped(start, length, dims, 1, 1)
        # dimension 0 (length 3) stops at stage 3
        assert not clamp_stopped(start, length, dims, 2, 0)
        assert clamp_stopped(start, length, dims, 3, 0)

    def test_boundary_stop_consumes_no_trial(self):
        # side ending on the boundary stops as soon as it arrives there
        start, length, dims = (6, 1), (3, 1), (8, 8)
        assert not clamp_stopped(start, length, dims, 1, 0)
        assert clamp_stopped(start, length, dims, 2, 0)


class TestBirthDeath:
    def test_death_with_empty_partition_rejects(self):
        hp = HyperParams(tau=1.0, theta=0.5, gamma=0.2, p_birth=0.5)
        st = flat_state(4)
        lam = poisson_rate(hp, st.part.shape)
        seen_death = False
        for seed in range(40):
            rng = np.random.default_rng(seed)
            if rng.random() >= hp.p_birth:  # this seed proposes a death first
                st = flat_state(4)
                kind, ok = move_birth_death(st, hp, lam, np.random.default_rng(seed))
                assert (kind, ok) == ("death", False)
                assert len(st.part.patches) == 0
                seen_death = True
                break
        assert seen_death

    def test_flat_likelihood_count_law(self):
        # long kernel-only chain: stationary K is Poisson(tau * lambda)
        n = 6
        hp = HyperParams(tau=1.0, theta=0.5, gamma=0.3, p_birth=0.5)
        cfg = ChainConfig(
            iterations=30_000,
            hp=hp,
            smc=SmcConfig(2, n),
            mtm=MtmConfig(1),
            seed=31,
            burn_in=1000,
            thin=10,
            enabled_moves=("birth_death",),
            coherence_every=2000,
        )
        res = run_chain(
            np.zeros((n, n), dtype=np.int8), np.zeros((n, n), dtype=bool), cfg
        )
        lam = poisson_rate(hp, ArrayShape((n, n)))
        ks = np.array([len(s.part.patches) for s in res.samples])
        kmax = ks.max()
        pmf = stats.poisson.pmf(np.arange(kmax + 1), lam * hp.tau)
        pmf[-1] += max(0.0, 1 - pmf.sum())
        p = pooled_chisquare(np.bincount(ks, minlength=kmax + 1), pmf)
        assert p > 0.01, p


class TestCostMove:
    def test_budget_slack_never_negative(self):
        rng = np.random.default_rng(6)
        hp = HyperParams(tau=1.0, theta=0.5, gamma=0.02)
        shape = ArrayShape((5, 5))
        part = Partition(
            shape,
            [Patch((1, 1), (2, 2), 0.3, shape), Patch((2, 2), (3, 3), 0.4, shape)],
            tau=1.0,
        )
        st = RelationalState(
            sample_relations(part, np.arange(5), np.arange(5), hp.gamma, rng),
            np.ones((5, 5), bool),
            part,
            np.arange(5),
            np.arange(5),
            hp.gamma,
        )
        lam = poisson_rate(hp, shape)
        for _ in range(500):
            move_cost(st, int(rng.integers(2)), lam, rng)
            total = sum(p.cost for p in st.part.patches)
            assert total <= st.part.tau + 1e-12

    def test_flat_likelihood_stationary_uniform(self):
        # With the acceptance formula as written, the flat-likelihood
        # stationary law of one cost given the rest is Uniform(0, B].
        n = 4
        shape = ArrayShape((n, n))
        part = Partition(shape, [Patch((1, 1), (2, 2), 0.5, shape)], tau=1.0)
        st = flat_state(n, part=part)
        lam = 2.0
        rng = np.random.default_rng(8)
        draws = []
        for it in range(30_000):
            move_cost(st, 0, lam, rng)
            if it % 10 == 0:
                draws.append(st.part.patches[0].cost)
        p = stats.kstest(draws, stats.uniform(loc=0, scale=1.0).cdf).pvalue
        assert p > 0.01, p


class TestCsmc:
    def test_flat_likelihood_invariance(self):
        # exact kernel-invariance design: prior draw in, one sweep, the
        # output must be a prior draw again (i.i.d. across trials)
        from spp.prior import _sample_direct

        n = 6
        shape = ArrayShape((n, n))
        hp = HyperParams(tau=1.0, theta=0.5, gamma=0.2)
        smc = SmcConfig(particles=3, stages=n)
        rng = np.random.default_rng(10)
        counts = [np.zeros((n, n)), np.zeros((n, n))]
        for _ in range(8000):
            s, l = _sample_direct((n, n), hp.theta, 1, rng)
            part = Partition(
                shape,
                [Patch(tuple(int(v) for v in s[0]), tuple(int(v) for v in l[0]), 0.4, shape)],
                tau=1.0,
            )
            st = flat_state(n, part=part)
            move_patch_csmc(st, 0, hp, smc, rng)
            q = st.part.patches[0]
            for d in (0, 1):
                counts[d][q.start[d] - 1, q.length[d] - 1] += 1
        pmf = direct_pmf(n, hp.theta)
        for d in (0, 1):
            assert pooled_chisquare(counts[d], pmf) > 0.01

    def test_flat_likelihood_chain_marginal(self):
        # thinned long chain on one patch: marginal matches the prior
        n = 6
        shape = ArrayShape((n, n))
        part = Partition(shape, [Patch((2, 3), (2, 1), 0.4, shape)], tau=1.0)
        st = flat_state(n, part=part)
        hp = HyperParams(tau=1.0, theta=0.5, gamma=0.2)
        smc = SmcConfig(particles=3, stages=n)
        rng = np.random.default_rng(10)
        counts = [np.zeros((n, n)), np.zeros((n, n))]
        for it in range(40_000):
            move_patch_csmc(st, 0, hp, smc, rng)
            if it % 10:
                continue
            q = st.part.patches[0]
            for d in (0, 1):
                counts[d][q.start[d] - 1, q.length[d] - 1] += 1
        pmf = direct_pmf(n, hp.theta)
        for d in (0, 1):
            assert pooled_chisquare(counts[d], pmf) > 0.01

    def test_posterior_matches_enumeration_small(self):
        # informative data, single pinned patch: chain marginal vs exact posterior
        n = 5
        shape = ArrayShape((n, n))
        gamma, cost, tau = 0.01, 0.4, 1.0
        hp = HyperParams(tau=tau, theta=0.5, gamma=gamma)
        r = np.zeros((n, n), dtype=np.int8)
        r[1:4, 2:5] = 1  # true block: start (2,3), length (3,3)
        mask = np.ones((n, n), bool)

        def box_loglik(s1, l1, s2, l2):
            rho_in = max(min((math.expm1(cost / (l1 * l2) / gamma + math.exp(-6)))
                             / (math.expm1(cost / (l1 * l2) / gamma + math.exp(-6)) + 2),
                             1 - 1e-12), 1e-12)
            rho_out = 0.0012393754537510478
            ll = 0.0
            for i in range(n):
                for j in range(n):
                    inside = s1 <= i + 1 <= s1 + l1 - 1 and s2 <= j + 1 <= s2 + l2 - 1
                    rho = rho_in if inside else rho_out
                    ll += math.log(rho) if r[i, j] else math.log1p(-rho)
            return ll

        pmf1 = direct_pmf(n, hp.theta)
        log_post = {}
        for s1 in range(1, n + 1):
            for l1 in range(1, n - s1 + 2):
                for s2 in range(1, n + 1):
                    for l2 in range(1, n - s2 + 2):
                        log_post[(s1, l1, s2, l2)] = (
                            math.log(pmf1[s1 - 1, l1 - 1])
                            + math.log(pmf1[s2 - 1, l2 - 1])
                            + box_loglik(s1, l1, s2, l2)
                        )
        keys = list(log_post)
        vals = np.array([log_post[k] for k in keys])
        post = np.exp(vals - vals.max())
        post /= post.sum()
        exact = dict(zip(keys, post))

        part = Partition(shape, [Patch((1, 1), (1, 1), cost, shape)], tau=tau)
        st = RelationalState(r, mask, part, np.arange(n), np.arange(n), gamma)
        smc = SmcConfig(particles=3, stages=n)
        rng = np.random.default_rng(12)
        counts = {}
        sweeps = 20_000
        for _ in range(sweeps):
            move_patch_csmc(st, 0, hp, smc, rng)
            q = st.part.patches[0]
            key = (q.start[0], q.length[0], q.start[1], q.length[1])
            counts[key] = counts.get(key, 0) + 1
        tv = 0.5 * sum(
            abs(counts.get(k, 0) / sweeps - exact[k]) for k in keys
        )
        assert tv < 0.08, tv

    def test_theta_one_forces_full_span(self):
        n = 4
        shape = ArrayShape((n, n))
        part = Partition(shape, [Patch((1, 1), (n, n), 0.3, shape)], tau=1.0)
        st = flat_state(n, part=part)
        hp = HyperParams(tau=1.0, theta=1.0, gamma=0.2)
        rng = np.random.default_rng(13)
        for _ in range(50):
            move_patch_csmc(st, 0, hp, SmcConfig(3, n), rng)
            q = st.part.patches[0]
            assert q.start == (1, 1) and q.length == (n, n)

    def test_cost_preserved_rate_rederived(self):
        n = 5
        shape = ArrayShape((n, n))
        part = Partition(shape, [Patch((1, 1), (2, 2), 0.25, shape)], tau=1.0)
        st = flat_state(n, part=part)
        hp = HyperParams(tau=1.0, theta=0.5, gamma=0.2)
        rng = np.random.default_rng(14)
        for _ in range(30):
            move_patch_csmc(st, 0, hp, SmcConfig(2, n), rng)
            q = st.part.patches[0]
            assert q.cost == 0.25
            assert q.rate == 0.25 / q.volume()


class TestMtm:
    def test_identical_rows_swap_keeps_loglik(self):
        n = 4
        r = np.zeros((n, n), dtype=np.int8)
        r[0] = r[2] = [1, 0, 1, 0]
        shape = ArrayShape((n, n))
        st = RelationalState(
            r, np.ones((n, n), bool), Partition(shape, [], 1.0),
            np.arange(n), np.arange(n), 0.5,
        )
        before = st.loglik
        move_perm_mtm(st, "row", MtmConfig(2), np.random.default_rng(15))
        assert st.loglik == pytest.approx(before, abs=1e-9)
        assert sorted(st.row_of.tolist()) == list(range(n))

    def test_flat_likelihood_uniform_positions(self):
        n = 5
        st = flat_state(n)
        rng = np.random.default_rng(16)
        counts = np.zeros((n, n))
        for _ in range(3000):
            move_perm_mtm(st, "row", MtmConfig(2), rng)
            for latent, data in enumerate(st.row_of):
                counts[latent, data] += 1
        for latent in range(n):
            p = pooled_chisquare(counts[latent], np.full(n, 1.0 / n))
            assert p > 0.01

    def test_z_one_is_plain_swap(self):
        n = 4
        st = flat_state(n)
        rng = np.random.default_rng(17)
        acc, tries = move_perm_mtm(st, "row", MtmConfig(1), rng)
        assert tries == n
        assert acc == n  # flat likelihood: every swap accepted
        assert sorted(st.col_of.tolist()) == list(range(n))


class TestJointLogDensity:
    def test_empty_partition_flat_mask(self):
        n = 4
        st = flat_state(n, tau=1.0)
        hp = HyperParams(tau=1.0, theta=0.5, gamma=0.2)
        lam = 3.0
        expect = -1.0 * lam - 2 * math.lgamma(n + 1)
        assert joint_log_density(st, hp, lam) == pytest.approx(expect, rel=1e-12)

    def test_birth_changes_density_by_alpha_factors(self):
        rng = np.random.default_rng(18)
        n = 6
        hp = HyperParams(tau=1.0, theta=0.5, gamma=0.05)
        shape = ArrayShape((n, n))
        part = Partition(shape, [Patch((2, 2), (3, 2), 0.4, shape)], tau=1.0)
        r = sample_relations(part, np.arange(n), np.arange(n), hp.gamma, rng)
        st = RelationalState(r, np.ones((n, n), bool), part,
                             np.arange(n), np.arange(n), hp.gamma)
        lam = poisson_rate(hp, shape)
        before = joint_log_density(st, hp, lam)
        change = AddPatch(0, (4, 1), (2, 3), 0.2)
        dll = delta_log_likelihood(st, change)
        apply_change(st, change)
        after = joint_log_density(st, hp, lam)
        pos_prior = (
            math.log(direct_pmf(n, hp.theta)[3, 1])
            + math.log(direct_pmf(n, hp.theta)[0, 2])
        )
        assert after - before == pytest.approx(dll + math.log(lam) + pos_prior, abs=1e-9)

    def test_monotone_in_fit(self):
        n = 4
        shape = ArrayShape((n, n))
        part = Partition(shape, [Patch((1, 1), (2, 2), 0.9, shape)], tau=1.0)
        hp = HyperParams(tau=1.0, theta=0.5, gamma=0.01)
        good = np.zeros((n, n), dtype=np.int8)
        good[0, 0] = 1  # covered cell with high intensity
        bad = np.zeros((n, n), dtype=np.int8)
        mk = lambda r: RelationalState(
            r, np.ones((n, n), bool), Partition(shape, list(part.patches), 1.0),
            np.arange(n), np.arange(n), hp.gamma,
        )
        lam = poisson_rate(hp, shape)
        assert joint_log_density(mk(good), hp, lam) > joint_log_density(mk(bad), hp, lam)


class TestRunChain:
    def test_no_moves_returns_initial_state(self):
        n = 4
        shape = ArrayShape((n, n))
        part = Partition(shape, [Patch((1, 2), (2, 2), 0.3, shape)], tau=1.0)
        init = PosteriorSample(part, np.arange(n), np.arange(n), 0.1)
        cfg = ChainConfig(
            iterations=1, hp=HyperParams(1.0, 0.5, 0.1), seed=0,
            burn_in=0, thin=1, enabled_moves=(),
        )
        res = run_chain(np.zeros((n, n), np.int8), np.ones((n, n), bool), cfg, init=init)
        assert len(res.samples) == 1
        got = res.samples[0]
        assert [(p.start, p.length, p.cost) for p in got.part.patches] == [
            ((1, 2), (2, 2), 0.3)
        ]
        assert np.array_equal(got.row_of, np.arange(n))

    def test_fixed_seed_identical_trace(self):
        n = 5
        rng = np.random.default_rng(20)
        r = (rng.random((n, n)) < 0.3).astype(np.int8)
        cfg = ChainConfig(
            iterations=40, hp=HyperParams(1.0, 0.5, 0.05), smc=SmcConfig(3, n),
            mtm=MtmConfig(2), seed=99, burn_in=10, thin=2,
        )
        a = run_chain(r, np.ones((n, n), bool), cfg)
        b = run_chain(r, np.ones((n, n), bool), cfg)
        ta = [{k: v for k, v in row.items() if k != "wallclock_s"} for row in a.trace]
        tb = [{k: v for k, v in row.items() if k != "wallclock_s"} for row in b.trace]
        assert ta == tb
        assert len(a.samples) == len(b.samples)
        for sa, sb in zip(a.samples, b.samples):
            assert [(p.start, p.length, p.cost) for p in sa.part.patches] == [
                (p.start, p.length, p.cost) for p in sb.part.patches
            ]
            assert np.array_equal(sa.row_of, sb.row_of)
            assert np.array_equal(sa.col_of, sb.col_of)

    def test_invariants_and_checkpoints(self):
        n = 6
        rng = np.random.default_rng(21)
        r = (rng.random((n, n)) < 0.25).astype(np.int8)
        seen = []
        cfg = ChainConfig(
            iterations=120, hp=HyperParams(1.0, 0.6, 0.05), smc=SmcConfig(3, n),
            mtm=MtmConfig(2), seed=5, burn_in=20, thin=4,
            checkpoint_every=50, coherence_every=40,
        )
        res = run_chain(
            r, np.ones((n, n), bool), cfg, checkpoint_cb=lambda it, st: seen.append(it)
        )
        assert seen == [50, 100]
        for s in res.samples:
            assert sum(p.cost for p in s.part.patches) <= s.part.tau + 1e-12
            assert sorted(s.row_of.tolist()) == list(range(n))
            assert sorted(s.col_of.tolist()) == list(range(n))

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            ChainConfig(iterations=0)
        with pytest.raises(ValueError):
            ChainConfig(iterations=5, enabled_moves=("sprint",))
        with pytest.raises(ValueError):
            SmcConfig(particles=1)
        with pytest.raises(ValueError):
            MtmConfig(proposals=0)
