"""Unit tests for cookie_walk_lab.coupling module."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cookie_walk_lab.arrow_system import ArrowLaw, ArrowSystem, walk_from_arrows
from cookie_walk_lab.coupling import (
    Branch,
    MegaCookieLedger,
    MegaVertexConfig,
    Subcase,
    TriggerRecord,
    arrow_counts,
    arrow_statistics,
    assign_arrow,
    block_exit_stats,
    build_E,
    build_H_K,
    build_M,
    h_ratio_diagnostics,
    landing_stats,
    m_drift,
    m_walk_speed,
    mega_cookie_count,
    merge_counts,
    sandwich_check,
    scan_all_triggers,
    scan_triggers,
    strassen_bundle,
    trigger_ordering_violations,
    verify_replica,
)
from cookie_walk_lab.distributions import CookieEnvironment, JumpDistribution
from cookie_walk_lab.errors import CensoredRecordError, CouplingViolationError, PreconditionError
from cookie_walk_lab.walk_core import Trajectory

CFG = MegaVertexConfig(3, 9)

# Jumps straight from block to block
JUMP_PATH = [0, 9, 18]
# Jumps into block 1, then walks back down to block 0
RETURN_PATH = [0, 9, 8, 7, 6, 5, 4, 3, 2]
# Eats the cookies of block 0 one by one, then walks out to the right
SLOW_PATH = [0, 1, 2, 3, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]


def make_traj(path, env):
    return Trajectory(np.array(path), seed=0, env=env)


def reference_block_records(path, cfg, j):
    """Trigger sequences of block ``j`` alone, recounting cookies from the path prefix."""
    c, ell = cfg.c, cfg.ell

    def in_block(y, b):
        return y // ell == b and y - b * ell < c

    def fresh(t):
        return path[t] not in path[:t]

    def eaten(b, t):
        return sum(1 for s in range(t) if in_block(path[s], b) and fresh(s))

    out = []
    k, branch = 1, Branch.COOKIE
    current = window = None

    def open_window(t):
        nonlocal window
        current['U'] = t
        neighbor = branch is Branch.COOKIE and c - eaten(j + 1, t) > 0
        current['neighbor'] = neighbor
        window = cfg.exit_window(j, neighbor)

    def close(t):
        nonlocal current, k, branch
        current['V'] = t
        current['arrow'] = 1 if path[t] >= cfg.threshold(j, current['neighbor']) else -1
        out.append(current)
        current = None
        k += 1
        branch = Branch.COOKIE if c - eaten(j, t) > 0 else Branch.NO_COOKIE

    for t, y in enumerate(path):
        fresh_here = in_block(y, j) and fresh(t)
        if current is not None:
            if current['U'] is None:
                low, high = cfg.approach_interval(j)
                if fresh_here:
                    open_window(t)
                elif y < low or y > high:
                    open_window(t)
                    if y < window[0] or y > window[1]:
                        close(t)
            else:
                ate_last_step = t > 0 and in_block(path[t - 1], j) and fresh(t - 1)
                by_cookie = branch is Branch.COOKIE and t >= current['U'] + 1 and ate_last_step
                if by_cookie or y < window[0] or y > window[1]:
                    close(t)
        if current is None and in_block(y, j):
            if branch is Branch.COOKIE or y == ell * j + c - 1:
                current = {'j': j, 'k': k, 'T': t, 'branch': branch, 'U': None, 'V': None,
                           'neighbor': False, 'arrow': None}
                if branch is Branch.NO_COOKIE or fresh_here:
                    open_window(t)
    if current is not None:
        out.append(current)
    return [(r['j'], r['k'], r['T'], r['branch'], r['U'], r['V'], r['arrow']) for r in out]


class TestMegaVertexConfig:
    """Tests for MegaVertexConfig geometry."""

    def test_preconditions(self):
        """Test C-01: c >= 3 and ell >= 3c."""
        with pytest.raises(PreconditionError):
            MegaVertexConfig(2, 9)
        with pytest.raises(PreconditionError):
            MegaVertexConfig(3, 8)

    def test_geometry(self):
        """Test C-02: Blocks, approach intervals, exit windows and thresholds."""
        assert CFG.block_bounds(2) == (18, 20)
        assert CFG.block_of(19) == 2
        assert CFG.block_of(12) is None
        assert CFG.block_of(-7) == -1
        assert CFG.approach_interval(1) == (3, 11)
        assert CFG.exit_window(1, True) == (3, 17)
        assert CFG.exit_window(1, False) == (3, 19)
        assert CFG.threshold(1, True) == 18
        assert CFG.threshold(1, False) == 20

    def test_cookie_counts(self, eps_env):
        """Test C-03: Direct and ledger cookie counts agree."""
        traj = make_traj(SLOW_PATH, eps_env)
        ledger = MegaCookieLedger(traj, CFG)

        assert mega_cookie_count(traj, CFG, 0, 0) == 3
        assert mega_cookie_count(traj, CFG, 0, 2) == 1
        assert mega_cookie_count(traj, CFG, 1, 12) == 2
        for j in (0, 1):
            for t in range(len(SLOW_PATH) + 1):
                assert ledger.count(j, t) == mega_cookie_count(traj, CFG, j, t)
        with pytest.raises(PreconditionError):
            mega_cookie_count(traj, CFG, 0, len(SLOW_PATH) + 1)


class TestTriggerScan:
    """Tests for scan_all_triggers() and the arrows it assigns."""

    def test_jumps_give_plus_arrows(self, eps_env):
        """Test C-04: Eating a cookie and landing in the next block gives +1."""
        timeline = scan_all_triggers(make_traj(JUMP_PATH, eps_env), CFG)

        assert [(r.j, r.k, r.T, r.U, r.V, r.arrow) for r in timeline] == [
            (0, 1, 0, 0, 1, 1),
            (1, 1, 1, 1, 2, 1),
            (2, 1, 2, 2, None, None),
        ]
        assert timeline[0].subcase is Subcase.HIT_COOKIE_AT_T
        assert len(timeline.completed()) == 2
        assert timeline.pending == {0: (2, Branch.COOKIE), 1: (2, Branch.COOKIE)}

    def test_falling_back(self, eps_env):
        """Test C-05: A cookie jump that stays below the next block gives -1."""
        traj = make_traj(RETURN_PATH, eps_env)
        E, timeline = build_E(traj, CFG)

        assert [(r.j, r.k, r.T) for r in timeline] == [(0, 1, 0), (1, 1, 1), (0, 2, 8)]
        assert E.stack(0) == [1]
        assert E.stack(1) == [-1]
        assert timeline[-1].censored

    def test_no_cookie_branch(self, eps_env):
        """Test C-06: Once a block is empty its next sequence starts at the right end."""
        timeline = scan_all_triggers(make_traj(SLOW_PATH, eps_env), CFG)
        record = scan_triggers(make_traj(SLOW_PATH, eps_env), CFG, 0)[-1]

        assert [r.arrow for r in timeline.for_block(0)] == [-1, -1, -1, 1]
        assert (record.k, record.T, record.U, record.V) == (4, 4, 4, 13)
        assert record.branch is Branch.NO_COOKIE
        assert record.subcase is Subcase.NO_COOKIE_EXIT
        assert timeline[-1].j == 1 and timeline[-1].T == 13

    def test_record_dict(self, eps_env):
        """Test C-07: Records serialize branch and censoring as strings."""
        timeline = scan_all_triggers(make_traj(JUMP_PATH, eps_env), CFG)

        assert timeline[0].to_dict()['branch'] == 'cookie'
        assert timeline[-1].to_dict()['arrow'] == 'censored'

    def test_assign_arrow(self, eps_env):
        """Test C-08: Arrows are read at V; censored records have none."""
        traj = make_traj(JUMP_PATH, eps_env)
        timeline = scan_all_triggers(traj, CFG)

        assert assign_arrow(timeline[0], traj, CFG) == 1
        with pytest.raises(CensoredRecordError):
            assign_arrow(timeline[-1], traj, CFG)


class TestReferenceScanner:
    """scan_all_triggers() against a per-block brute-force scan."""

    ENV = CookieEnvironment.one_cookie(JumpDistribution.epsilon_family(15, 0.01))

    @settings(max_examples=150, deadline=None)
    @given(steps=st.lists(st.sampled_from([-1, 1, 1, 2, 9]), max_size=80))
    def test_literal_scan_matches_reference(self, steps):
        """Test C-10b: Every block's records agree with a scan of that block alone."""
        path = np.concatenate([[0], np.cumsum(steps)]).astype(int).tolist()
        timeline = scan_all_triggers(make_traj(path, self.ENV), CFG, sequenced=False)
        blocks = {y // CFG.ell for y in path if y - (y // CFG.ell) * CFG.ell < CFG.c}

        assert {r.j for r in timeline} <= blocks
        for j in blocks:
            expected = reference_block_records(path, CFG, j)
            got = [(r.j, r.k, r.T, r.branch, r.U, r.V, r.arrow) for r in timeline.for_block(j)]
            assert sorted(got, key=lambda r: r[1]) == expected

    def test_hand_paths_match_reference(self, eps_env):
        """Test C-10c: The hand-built paths agree as well."""
        for path in (JUMP_PATH, RETURN_PATH, SLOW_PATH):
            timeline = scan_all_triggers(make_traj(path, eps_env), CFG, sequenced=False)
            for j in {r.j for r in timeline}:
                got = [(r.j, r.k, r.T, r.branch, r.U, r.V, r.arrow) for r in timeline.for_block(j)]
                assert got == reference_block_records(path, CFG, j)


class TestTriggerOrdering:
    """Tests for trigger_ordering_violations() in both scan modes."""

    def test_sequenced_has_no_overlap(self, eps_env):
        """Test C-09: Sequenced scanning keeps every record before the next."""
        timeline = scan_all_triggers(make_traj(SLOW_PATH, eps_env), CFG, sequenced=True)

        assert len(timeline) == 5
        assert trigger_ordering_violations(timeline) == []

    def test_literal_reports_overlap(self, eps_env):
        """Test C-10: Independent per-block scanning lets block 1 start inside block 0's sequence."""
        timeline = scan_all_triggers(make_traj(SLOW_PATH, eps_env), CFG, sequenced=False)
        violations = trigger_ordering_violations(timeline)

        assert len(timeline) == 7
        assert len(violations) == 1
        assert violations[0]['kind'] == 'intertwined'
        assert violations[0]['next']['j'] == 1

    def test_within_violation(self):
        """Test C-11: U before T is flagged."""
        record = TriggerRecord(0, 1, T=4, branch=Branch.COOKIE, U=2, V=6)

        assert trigger_ordering_violations([record])[0]['kind'] == 'within'

    def test_simulated_sequenced(self, eps_trajectory):
        """Test C-12: A long simulated path has no ordering violations when sequenced."""
        timeline = scan_all_triggers(eps_trajectory, MegaVertexConfig(3, 13))

        assert len(timeline.completed()) > 100
        assert trigger_ordering_violations(timeline) == []


class TestDerivedSystems:
    """Tests for build_H_K(), sandwich_check() and the block diagnostics."""

    def test_forward_jump_over_block(self, eps_env):
        """Test C-13: Skipping a block pushes one H arrow but two K arrows."""
        traj = make_traj([0, 18], eps_env)
        H, K, bundle = build_H_K(traj, CFG)

        assert bundle.j_seq == [0, 2]
        assert H.stack(0) == [1] and H.depth(1) == 0
        assert K.stack(0) == [1] and K.stack(1) == [1]
        assert bundle.sigma_cum == [0, 2]
        report = sandwich_check(bundle, traj, CFG)
        assert report.passed
        assert report.literal_hold_rate == 1.0

    def test_backward_move(self, eps_env):
        """Test C-14: Moving back a block pushes -1 on H and K."""
        traj = make_traj(RETURN_PATH, eps_env)
        H, K, bundle = build_H_K(traj, CFG)

        assert bundle.j_seq == [0, 1, 0]
        assert H.stack(1) == [-1]
        assert K.stack(1) == [-1]
        assert bundle.dominance_holds
        assert sandwich_check(bundle, traj, CFG).passed

    def test_dominance_chain_on_slow_path(self, eps_env):
        """Test C-15: H majorizes E when the cookies of a block were eaten in place."""
        traj = make_traj(SLOW_PATH, eps_env)
        _, _, bundle = build_H_K(traj, CFG)

        assert bundle.E.stack(0) == [-1, -1, -1, 1]
        assert bundle.dominance == {'K>=H': None, 'H>=E': None}

    def test_broken_dominance_logged(self, eps_env, caplog):
        """Test C-16: A chain failure is recorded and logged."""
        traj = make_traj(JUMP_PATH, eps_env)
        E, timeline = build_E(traj, CFG)
        timeline.records.append(TriggerRecord(5, 1, T=10, branch=Branch.COOKIE, U=10, V=11,
                                               arrow=1))
        timeline.records.append(TriggerRecord(1, 2, T=12, branch=Branch.COOKIE, U=12, V=13,
                                              arrow=1))
        with caplog.at_level('WARNING'):
            _, _, bundle = build_H_K(traj, CFG, timeline)

        assert not bundle.dominance_holds
        assert 'dominance chain broken' in caplog.text

    def test_simulated_sandwich(self, eps_trajectory):
        """Test C-17: The K walk tracks the block of every first trigger."""
        cfg = MegaVertexConfig(3, 13)
        _, K, bundle = build_H_K(eps_trajectory, cfg)
        xk = walk_from_arrows(K, bundle.sigma_cum[-1])

        assert sandwich_check(bundle, eps_trajectory, cfg).violations == []
        assert [int(xk[s]) for s in bundle.sigma_cum] == bundle.j_seq

    def test_block_exit(self, eps_env):
        """Test C-18: Consecutive first triggers in the same block count as stays."""
        _, _, bundle = build_H_K(make_traj(SLOW_PATH, eps_env), CFG)
        stats = block_exit_stats(bundle)

        assert (stats['stays'], stats['transitions']) == (3, 4)
        assert stats['stay_rate'] == pytest.approx(0.75)

    def test_h_ratio(self, eps_env):
        """Test C-19: Block times are indexed from 0, so H_n / n is at least 1."""
        _, _, bundle = build_H_K(make_traj(SLOW_PATH, eps_env), CFG)
        diag = h_ratio_diagnostics(bundle, make_traj(SLOW_PATH, eps_env), CFG)

        assert diag['n'] == 4
        assert diag['h_slope'] == pytest.approx(13 / 4)
        assert diag['min_gap'] == 1
        assert diag['y_block_rate'] == pytest.approx(11 / 4)
        assert diag['rho_proxy'] is None


class TestArrowCounts:
    """Tests for arrow_counts(), merge_counts() and arrow_statistics()."""

    def test_conditioning(self, eps_env):
        """Test C-20: V-conditioning adds unfinished and pending sequences as +1."""
        timeline = scan_all_triggers(make_traj(JUMP_PATH, eps_env), CFG)

        assert arrow_counts(timeline, CFG, 'T') == {('cookie', 'early'): (2, 2)}
        assert arrow_counts(timeline, CFG, 'V') == {('cookie', 'early'): (5, 5)}
        with pytest.raises(PreconditionError):
            arrow_counts(timeline, CFG, 'U')

    def test_merge(self):
        """Test C-21: Counts add key by key."""
        merged = merge_counts({('cookie', 'early'): (1, 2)},
                              {('cookie', 'early'): (3, 4), ('no_cookie', 'late'): (1, 1)})

        assert merged == {('cookie', 'early'): (4, 6), ('no_cookie', 'late'): (1, 1)}

    def test_statistics(self, eps_law):
        """Test C-22: Each branch is compared with its own bound."""
        counts = {('cookie', 'early'): (90, 100), ('no_cookie', 'late'): (30, 100)}
        report = arrow_statistics(counts, MegaVertexConfig(3, 13), eps_law)

        assert report['cookie']['bound'] == pytest.approx(11 / 13 * 0.99)
        assert report['cookie']['passed']
        assert report['no_cookie']['bound'] == 0.5
        assert not report['no_cookie']['passed']
        assert math.isnan(report['cookie']['by_depth']['late']['p'])

    def test_empty_branch_passes(self, eps_law):
        """Test C-23: A branch never seen does not fail."""
        report = arrow_statistics({}, MegaVertexConfig(3, 13), eps_law)

        assert report['cookie']['count'] == 0
        assert report['cookie']['passed']


class TestMSystem:
    """Tests for build_M(), m_drift() and strassen_bundle()."""

    def test_m_law(self, eps_law):
        """Test C-24: M arrows are +1 with the cookie-branch bound for k <= c."""
        cfg = MegaVertexConfig(3, 13)
        M = build_M(cfg, eps_law, seed=0)

        assert M.law(1) == pytest.approx(11 / 13 * 0.99)
        assert M.law(4) == 0.5
        assert m_drift(cfg, eps_law) == pytest.approx(3 * (2 * 11 / 13 * 0.99 - 1))
        assert m_drift(cfg, eps_law) > 2

    def test_strassen_dominated(self):
        """Test C-25: A sampler above the bound dominates M at every index."""
        indices = [(j, k) for j in range(50) for k in range(1, 6)]
        bundle = strassen_bundle(lambda j, k, E: 0.95, ArrowLaw(3, 0.8), seed=1, indices=indices)

        assert bundle.dominated == len(indices)
        assert bundle.strict > 0
        assert bundle.indices == indices

    def test_strassen_sees_history(self):
        """Test C-26: The sampler receives the arrows drawn so far."""
        seen = []

        def sampler(j, k, E_hat):
            seen.append(E_hat.count())
            return 0.9

        strassen_bundle(sampler, ArrowLaw(3, 0.9), seed=2, indices=[(0, 1), (0, 2), (1, 1)])

        assert seen == [0, 1, 2]

    def test_strassen_violation(self):
        """Test C-27: A sampler below the bound is refused."""
        with pytest.raises(CouplingViolationError) as exc:
            strassen_bundle(lambda j, k, E: 0.5, ArrowLaw(3, 0.8), seed=1, indices=[(0, 1)])

        assert exc.value.index == (0, 1)

    def test_m_walk_speed(self, eps_law):
        """Test C-28: The M walk speed is aggregated as a replica mean."""
        estimate = m_walk_speed(MegaVertexConfig(3, 13), eps_law, replicas=4, horizon=2000, seed=0)

        assert estimate.method == 'naive-mean'
        assert estimate.ci_low <= estimate.point <= estimate.ci_high


class TestVerifyReplica:
    """Tests for landing_stats() and verify_replica()."""

    def test_landing_counts(self, eps_trajectory):
        """Test C-29: Every landing is a success or a failure."""
        cfg = MegaVertexConfig(3, 13)
        _, timeline = build_E(eps_trajectory, cfg)
        stats = landing_stats(eps_trajectory, cfg, timeline, eps_trajectory.env.laws[0])

        assert stats['landings'] == stats['successes'] + stats['failures']
        assert stats['kappa'] == pytest.approx(0.01 ** 10)
        if stats['landings']:
            assert stats['passed'] is True
            assert stats['success_rate'] >= stats['kappa'] - 3 * stats['se']
        else:
            assert 'passed' not in stats

    def test_verify_replica(self, eps_env):
        """Test C-30: A sequenced replica has ordered records and a clean sandwich."""
        row = verify_replica(eps_env, MegaVertexConfig(3, 13), seed=3, horizon=20_000,
                             sequenced=True, replica=1)

        assert row['replica'] == 1
        assert row['ordering_violations'] == 0
        assert row['sandwich']['violation_count'] == 0
        assert row['completed'] <= row['records']
        assert row['h_ratio']['h_slope'] >= 1

    @pytest.mark.slow
    def test_arrow_bound_acceptance(self, eps_env):
        """Test C-31: Pooled cookie-branch frequency over 50 replicas clears the bound."""
        cfg = MegaVertexConfig(3, 13)
        rows = [verify_replica(eps_env, cfg, 0, 200_000, True, r) for r in range(50)]
        report = arrow_statistics(merge_counts(*(r['counts_T'] for r in rows)), cfg,
                                  eps_env.laws[0])

        assert report['cookie']['passed']
        assert all(r['sandwich']['violation_count'] == 0 for r in rows)

    @pytest.mark.slow
    def test_sandwich_acceptance(self, eps_env):
        """Test C-31b: 20 replicas at 10^6 steps, no sandwich or dominance failures."""
        cfg = MegaVertexConfig(3, 13)
        rows = [verify_replica(eps_env, cfg, 0, 1_000_000, True, r) for r in range(20)]

        assert all(r['sandwich']['violation_count'] == 0 for r in rows)
        assert all(r['ordering_violations'] == 0 for r in rows)
        assert all(v is None for r in rows for v in r['dominance'].values())

    @pytest.mark.slow
    def test_m_walk_acceptance(self, eps_law):
        """Test C-31c: The M walk at (3, 13, 0.01) has a 99% CI above 0 over 100 replicas."""
        cfg = MegaVertexConfig(3, 13)
        estimate = m_walk_speed(cfg, eps_law, replicas=100, horizon=1_000_000, seed=0)

        assert m_drift(cfg, eps_law) > 2
        assert estimate.point > 0
        assert estimate.excludes_zero()


def test_arrow_system_replay_matches_k(eps_env):
    """Test C-32: K is the arrow system of the expanded block path."""
    _, K, bundle = build_H_K(make_traj(RETURN_PATH, eps_env), CFG)

    assert isinstance(K, ArrowSystem)
    assert walk_from_arrows(K, bundle.sigma_cum[-1]).tolist() == bundle.j_seq
