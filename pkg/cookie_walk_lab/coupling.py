"""Mega vertices, trigger sequences and the arrow systems coupled to a walk.

The lattice is coarse-grained into mega vertices ``B_j = [ell*j, ell*j + c - 1]``.
For every block a sequence of trigger times (T, U, V) is read off the walk;
each completed sequence assigns one arrow of the system E. From the order in
which blocks are triggered two more systems are derived: H (one arrow per
block change) and K (one arrow per block crossed), and both dominate E.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from itertools import pairwise

import numpy as np

from .arrow_system import (
    ArrowLaw,
    ArrowSystem,
    SampledArrowSystem,
    first_dominance_failure,
    walk_from_arrows,
)
from .criteria import arrow_bound
from .errors import CensoredRecordError, CouplingViolationError, PreconditionError
from .oracles import two_point_quantile
from .renewal_speed import aggregate_naive
from .stats import proportion
from .walk_core import simulate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MegaVertexConfig:
    c: int
    ell: int

    def __post_init__(self):
        if self.c < 3:
            raise PreconditionError(f"c must be >= 3, got {self.c}")
        if self.ell < 3 * self.c:
            raise PreconditionError(f"ell must be >= 3c = {3 * self.c}, got {self.ell}")

    def block_bounds(self, j):
        return self.ell * j, self.ell * j + self.c - 1

    def block_of(self, y):
        """Index of the mega vertex containing ``y``, or None between blocks."""
        j = y // self.ell
        return j if y - j * self.ell < self.c else None

    def approach_interval(self, j):
        """``[ell(j-1)+c, ell*j+c-1]``; leaving it ends the wait for a cookie."""
        return self.ell * (j - 1) + self.c, self.ell * j + self.c - 1

    def exit_window(self, j, neighbor_has_cookie):
        low = self.ell * (j - 1) + self.c
        if neighbor_has_cookie:
            return low, self.ell * (j + 1) - 1
        return low, self.ell * (j + 1) + self.c - 2

    def threshold(self, j, neighbor_has_cookie):
        """Smallest ``Y_V`` that keeps the arrow at +1."""
        if neighbor_has_cookie:
            return self.ell * (j + 1)
        return self.ell * (j + 1) + self.c - 1


class Branch(str, Enum):
    COOKIE = 'cookie'
    NO_COOKIE = 'no_cookie'


class Subcase(str, Enum):
    HIT_COOKIE_AT_T = 'hit-cookie-at-T'
    HIT_COOKIE_LATER = 'hit-cookie-later'
    EXITED_LEFT = 'exited-left'
    EXITED_RIGHT_THEN_COOKIE = 'exited-right-then-cookie'
    EXITED_WITHOUT_COOKIE = 'exited-without-cookie'
    NO_COOKIE_EXIT = 'no-cookie-exit'


@dataclass
class TriggerRecord:
    j: int
    k: int
    T: int
    branch: Branch
    U: int = None
    V: int = None
    neighbor_state: bool = None
    subcase: Subcase = None
    arrow: int = None
    hit_cookie_at_U: bool = False

    @property
    def censored(self):
        return self.V is None

    def to_dict(self):
        return {
            'j': self.j,
            'k': self.k,
            'T': self.T,
            'U': self.U,
            'V': self.V,
            'branch': self.branch.value,
            'subcase': self.subcase.value if self.subcase else None,
            'neighbor_state': self.neighbor_state,
            'arrow': self.arrow if self.arrow is not None else 'censored',
        }


@dataclass
class TriggerTimeline:
    """All trigger records of one trajectory, ordered by first trigger time.

    ``pending`` maps a block whose last sequence completed to the index and
    branch of its next, not yet triggered, sequence.
    """

    records: list
    pending: dict
    sequenced: bool
    horizon: int

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, item):
        return self.records[item]

    def completed(self):
        return [r for r in self.records if not r.censored]

    def for_block(self, j):
        return [r for r in self.records if r.j == j]


class MegaCookieLedger:
    """First-visit times, from which the cookie count of any block at any time follows."""

    def __init__(self, traj, cfg):
        self.cfg = cfg
        vertices, first = np.unique(traj.positions, return_index=True)
        self.first_visit = dict(zip(vertices.tolist(), first.tolist()))

    def count(self, j, t):
        """Cookies left in ``B_j`` right before time ``t``."""
        low, high = self.cfg.block_bounds(j)
        eaten = sum(1 for v in range(low, high + 1) if self.first_visit.get(v, t) < t)
        return self.cfg.c - eaten


def mega_cookie_count(traj, cfg, j, t):
    """``c`` minus the number of vertices of ``B_j`` visited before time ``t``."""
    if not 0 <= t <= traj.horizon + 1:
        raise PreconditionError(f"time {t} outside [0, {traj.horizon + 1}]")
    low, high = cfg.block_bounds(j)
    seen = traj.positions[:t]
    return cfg.c - int(np.unique(seen[(seen >= low) & (seen <= high)]).size)


def arrow_value(record, y_v, cfg):
    neighbor = record.branch is Branch.COOKIE and record.neighbor_state
    return 1 if y_v >= cfg.threshold(record.j, neighbor) else -1


def assign_arrow(record, traj, cfg):
    if record.censored:
        raise CensoredRecordError(
            f"trigger sequence {record.k} of block {record.j} is unfinished at the horizon")
    return arrow_value(record, int(traj.positions[record.V]), cfg)


def _subcase(record, y_u, cfg, by_cookie):
    if record.branch is Branch.NO_COOKIE:
        return Subcase.NO_COOKIE_EXIT
    if record.hit_cookie_at_U:
        return Subcase.HIT_COOKIE_AT_T if record.U == record.T else Subcase.HIT_COOKIE_LATER
    if y_u < cfg.approach_interval(record.j)[0]:
        return Subcase.EXITED_LEFT
    return Subcase.EXITED_RIGHT_THEN_COOKIE if by_cookie else Subcase.EXITED_WITHOUT_COOKIE


def scan_all_triggers(traj, cfg, sequenced=True):
    """One forward pass over ``traj`` producing every block's trigger records.

    With ``sequenced=True`` a block's first trigger is only armed while no
    other block sits between its own first and third triggers, so successive
    sequences never overlap. ``sequenced=False`` evaluates every block on its
    own, and overlaps show up in ``trigger_ordering_violations``.
    """
    c, ell = cfg.c, cfg.ell
    path = traj.positions.tolist()
    fresh = traj.first_visit_mask().tolist()
    eaten = {}
    pending = {}
    active = {}
    windows = {}
    records = []
    previous_fresh_block = None

    def open_window(record, t):
        record.U = t
        if record.branch is Branch.COOKIE:
            record.neighbor_state = c - eaten.get(record.j + 1, 0) > 0
        windows[record.j] = cfg.exit_window(record.j, record.branch is Branch.COOKIE
                                            and record.neighbor_state)

    def close(record, t, by_cookie):
        record.V = t
        record.arrow = arrow_value(record, path[t], cfg)
        record.subcase = _subcase(record, path[record.U], cfg, by_cookie)
        del active[record.j]
        del windows[record.j]
        branch = Branch.COOKIE if c - eaten.get(record.j, 0) > 0 else Branch.NO_COOKIE
        pending[record.j] = (record.k + 1, branch)

    for t, y in enumerate(path):
        jb = y // ell
        in_block = y - jb * ell < c
        fresh_block = jb if (in_block and fresh[t]) else None

        for j in sorted(active):
            record = active[j]
            if record.U is None:
                low, high = cfg.approach_interval(j)
                if fresh_block == j:
                    record.hit_cookie_at_U = True
                    open_window(record, t)
                elif y < low or y > high:
                    open_window(record, t)
                    low, high = windows[j]
                    if y < low or y > high:
                        close(record, t, by_cookie=False)
                continue
            low, high = windows[j]
            by_cookie = (record.branch is Branch.COOKIE and t >= record.U + 1
                         and previous_fresh_block == j)
            if by_cookie or y < low or y > high:
                close(record, t, by_cookie)

        if in_block and jb not in active and (not sequenced or not active):
            k, branch = pending.get(jb, (1, Branch.COOKIE))
            if branch is Branch.COOKIE or y == ell * jb + c - 1:
                record = TriggerRecord(jb, k, t, branch)
                active[jb] = record
                records.append(record)
                if branch is Branch.NO_COOKIE:
                    open_window(record, t)
                elif fresh_block == jb:
                    record.hit_cookie_at_U = True
                    open_window(record, t)

        if fresh_block is not None:
            eaten[fresh_block] = eaten.get(fresh_block, 0) + 1
        previous_fresh_block = fresh_block

    censored = len(active)
    logger.debug("replica %d: %d trigger records, %d censored (sequenced=%s)",
                 traj.replica, len(records), censored, sequenced)
    return TriggerTimeline(records, pending, sequenced, traj.horizon)


def scan_triggers(traj, cfg, j, sequenced=True):
    """Trigger records of block ``j`` alone."""
    return scan_all_triggers(traj, cfg, sequenced).for_block(j)


def build_E(traj, cfg, sequenced=True):
    """Arrow system E; arrows of unfinished or untriggered sequences stay +1."""
    timeline = scan_all_triggers(traj, cfg, sequenced)
    return _arrows_from(timeline), timeline


def _arrows_from(records):
    E = ArrowSystem()
    for record in records:
        if not record.censored:
            E.set(record.j, record.k, record.arrow)
    return E


def trigger_ordering_violations(records):
    """Records out of order, within a sequence or between consecutive sequences."""
    violations = []
    ordered = sorted(records, key=lambda r: r.T)
    for record in ordered:
        U = record.U if record.U is not None else float('inf')
        V = record.V if record.V is not None else float('inf')
        if not record.T <= U <= V:
            violations.append({'kind': 'within', 'record': record.to_dict()})
    for current, following in pairwise(ordered):
        V = current.V if current.V is not None else float('inf')
        if not (current.T < following.T and V <= following.T):
            violations.append({'kind': 'intertwined', 'record': current.to_dict(),
                               'next': following.to_dict()})
    return violations


@dataclass
class CoupledBundle:
    E: ArrowSystem
    H: ArrowSystem
    K: ArrowSystem
    records: TriggerTimeline
    H_times: list
    blocks: list
    tau_seq: list
    j_seq: list
    sigma_cum: list
    M: ArrowSystem = None
    dominance: dict = field(default_factory=dict)

    @property
    def dominance_holds(self):
        return all(v is None for v in self.dominance.values())


def build_H_K(traj, cfg, records=None, sequenced=True):
    """Derive H and K from the block sequence at the first-trigger times.

    A forward move ``a -> b`` pushes +1 on stack ``a`` of H and on stacks
    ``a .. b-1`` of K; a backward move pushes -1 on stack ``a`` of H and on
    stacks ``a .. b+1`` of K. Returns ``(H, K, bundle)``.
    """
    if records is None:
        E, records = build_E(traj, cfg, sequenced)
    else:
        E = _arrows_from(records)
    ordered = sorted(records, key=lambda r: r.T)
    H_times = [r.T for r in ordered]
    blocks = [r.j for r in ordered]

    tau_seq, j_seq = [], []
    for n, j in enumerate(blocks):
        if not j_seq or j != j_seq[-1]:
            tau_seq.append(n)
            j_seq.append(j)

    H, K = ArrowSystem(), ArrowSystem()
    sigma_cum = [0]
    for a, b in pairwise(j_seq):
        if b > a:
            H.push(a, 1)
            for i in range(a, b):
                K.push(i, 1)
        else:
            H.push(a, -1)
            for i in range(a, b, -1):
                K.push(i, -1)
        sigma_cum.append(sigma_cum[-1] + abs(b - a))

    window = sorted(set(E.vertices()) | set(H.vertices()) | set(K.vertices()))
    dominance = {
        'K>=H': first_dominance_failure(K, H, window),
        'H>=E': first_dominance_failure(H, E, window),
    }
    if dominance['K>=H'] or dominance['H>=E']:
        logger.warning("dominance chain broken: %s", dominance)
    bundle = CoupledBundle(E, H, K, records, H_times, blocks, tau_seq, j_seq, sigma_cum,
                           dominance=dominance)
    return H, K, bundle


@dataclass
class SandwichReport:
    checked: int
    violations: list
    literal_hold_rate: float

    @property
    def passed(self):
        return not self.violations

    def to_dict(self):
        return {
            'checked': self.checked,
            'violations': self.violations[:10],
            'violation_count': len(self.violations),
            'literal_hold_rate': self.literal_hold_rate,
            'passed': self.passed,
        }


def sandwich_check(bundle, traj, cfg):
    """``ell * X^K_{sigma_n} <= Y_{H_{tau_n}} <= ell * X^K_{sigma_n} + c - 1`` for every n.

    ``sigma_n`` is the cumulative number of K arrows consumed. The rate at
    which the bound holds with the per-step reading ``|j_n - j_{n-1}|`` is
    reported alongside.
    """
    xk = walk_from_arrows(bundle.K, bundle.sigma_cum[-1])
    violations = []
    literal_holds = 0
    for n, tau in enumerate(bundle.tau_seq):
        y = int(traj.positions[bundle.H_times[tau]])
        x = int(xk[bundle.sigma_cum[n]])
        if not cfg.ell * x <= y <= cfg.ell * x + cfg.c - 1:
            violations.append({'n': n, 'tau': tau, 'Y': y, 'X': x})
        step = abs(bundle.j_seq[n] - bundle.j_seq[n - 1]) if n else 0
        x_literal = int(xk[step])
        literal_holds += cfg.ell * x_literal <= y <= cfg.ell * x_literal + cfg.c - 1
    checked = len(bundle.tau_seq)
    return SandwichReport(checked, violations, literal_holds / checked if checked else float('nan'))


def build_M(cfg, q, seed, replica=0):
    """Independent arrows with P(+1) from the cookie-branch bound for ``k <= c``, 1/2 after."""
    return SampledArrowSystem(ArrowLaw(cfg.c, arrow_bound(q, cfg.c, cfg.ell)), seed, replica)


def m_drift(cfg, q):
    """Total drift ``c (2p - 1)`` of the walk driven by M."""
    return ArrowLaw(cfg.c, arrow_bound(q, cfg.c, cfg.ell)).drift


@dataclass
class StrassenBundle:
    E_hat: ArrowSystem
    M: ArrowSystem
    indices: list
    strict: int

    @property
    def dominated(self):
        return sum(1 for j, k in self.indices if self.M.get(j, k) <= self.E_hat.get(j, k))


def strassen_bundle(sampler, law, seed, indices, replica=0):
    """Couple a sequential arrow sampler with the independent law ``law`` on shared uniforms.

    ``sampler(j, k, E_hat)`` returns the conditional probability of +1 given the
    arrows drawn so far; it must not fall below ``law(k)``. Both arrows at an
    index come from the same two-point quantile of one uniform, so ``M <= E_hat``
    holds index by index.
    """
    M = SampledArrowSystem(law, seed, replica)
    E_hat = ArrowSystem()
    strict = 0
    for j, k in indices:
        p_hat = sampler(j, k, E_hat)
        bound = law(k)
        if p_hat < bound - 1e-12:
            raise CouplingViolationError(
                f"sampler gives P(+1)={p_hat:.6g} at ({j}, {k}), below the bound {bound:.6g}",
                index=(j, k))
        u = M.uniform(j, k)
        m = M.get(j, k)
        e = two_point_quantile(p_hat, u)
        if m > e:
            raise CouplingViolationError(f"M({j}, {k}) = {m} exceeds E({j}, {k}) = {e}",
                                         index=(j, k))
        E_hat.set(j, k, e)
        strict += e > m
    return StrassenBundle(E_hat, M, list(indices), strict)


def landing_stats(traj, cfg, records, q=None):
    """Classify every landing after a third trigger as success, failure or censored.

    A landing in ``[ell(h-1)+c, ell*h+c-1]`` succeeds when the walk reaches
    ``ell(h-1)+c-1`` or the cookie target of block ``h`` (any vertex of ``B_h``
    while it holds cookies, else ``ell*h+c-1``) before ``ell*h+c``; otherwise
    the walk lands again further right.
    """
    c, ell = cfg.c, cfg.ell
    ledger = MegaCookieLedger(traj, cfg)
    path = traj.positions
    horizon = traj.horizon
    successes = failures = censored = 0
    for record in records:
        if record.censored:
            continue
        t = record.V
        while True:
            h = (int(path[t]) - c) // ell + 1
            has_cookie = ledger.count(h, t) > 0
            floor, ceiling = ell * (h - 1) + c - 1, ell * h + c
            outcome = None
            s = t
            while s <= horizon:
                y = int(path[s])
                if y <= floor:
                    outcome = 'success'
                elif y >= ceiling:
                    outcome = 'failure'
                elif has_cookie and y >= ell * h:
                    outcome = 'success'
                elif not has_cookie and y == ceiling - 1:
                    outcome = 'success'
                if outcome:
                    break
                s += 1
            if outcome is None:
                censored += 1
                break
            if outcome == 'success':
                successes += 1
                break
            failures += 1
            t = s
    total = successes + failures
    rate, se = proportion(successes, total)
    kappa = q.pmf(-1) ** (ell - c) if q is not None else None
    stats = {
        'landings': total,
        'successes': successes,
        'failures': failures,
        'censored': censored,
        'success_rate': rate,
        'se': se,
        'kappa': kappa,
    }
    if kappa is not None and total:
        stats['passed'] = rate >= kappa - 3 * se
    return stats


def h_ratio_diagnostics(bundle, traj, cfg):
    """Finite-n ratios around the block-time sequence.

    ``H`` is indexed from 0, so ``H_n / n >= 1`` for every ``n >= 1``.
    """
    H = bundle.H_times
    n = len(H) - 1
    if n < 1:
        return {'n': n}
    gaps = np.diff(H)
    changes = len(bundle.tau_seq) - 1
    xe = walk_from_arrows(bundle.E, n)
    y_rate = float(traj.positions[H[-1]]) / n
    x_rate = float(xe[-1]) / n
    return {
        'n': n,
        'h_slope': H[-1] / n,
        'min_gap': int(gaps.min()),
        'ell_n_over_tau': cfg.ell * changes / bundle.tau_seq[-1] if changes else None,
        'y_block_rate': y_rate,
        'x_e_rate': x_rate,
        'rho_proxy': y_rate / x_rate if x_rate > 0 else None,
    }


def block_exit_stats(bundle):
    """Frequency with which the next first trigger is in the same block."""
    stays = sum(1 for a, b in pairwise(bundle.blocks) if a == b)
    moves = max(len(bundle.blocks) - 1, 0)
    p, se = proportion(stays, moves)
    return {'transitions': moves, 'stays': stays, 'stay_rate': p, 'se': se,
            'passed': moves == 0 or p <= 0.5 + 3 * se}


def arrow_counts(timeline, cfg, conditioning='T'):
    """Per-branch counts of +1 arrows, split at ``k <= c``.

    ``conditioning='T'`` counts completed sequences only. ``conditioning='V'``
    also counts unfinished sequences and the next sequence of every block
    that has completed one, all as +1 (an infinite third trigger keeps the
    default arrow).
    """
    counts = {}

    def add(branch, k, value):
        key = (branch.value, 'early' if k <= cfg.c else 'late')
        plus, total = counts.get(key, (0, 0))
        counts[key] = (plus + (value == 1), total + 1)

    for record in timeline:
        if not record.censored:
            add(record.branch, record.k, record.arrow)
        elif conditioning == 'V':
            add(record.branch, record.k, 1)
    if conditioning == 'V':
        active = {r.j for r in timeline if r.censored}
        for j, (k, branch) in timeline.pending.items():
            if j not in active:
                add(branch, k, 1)
    elif conditioning != 'T':
        raise PreconditionError(f"conditioning must be 'T' or 'V', got {conditioning!r}")
    return counts


def merge_counts(*many):
    merged = {}
    for counts in many:
        for key, (plus, total) in counts.items():
            p0, t0 = merged.get(key, (0, 0))
            merged[key] = (p0 + plus, t0 + total)
    return merged


def arrow_statistics(counts, cfg, q):
    """Pooled P(+1) per branch against its lower bound, with a 3 SE tolerance."""
    bounds = {Branch.COOKIE.value: arrow_bound(q, cfg.c, cfg.ell), Branch.NO_COOKIE.value: 0.5}
    report = {}
    for branch, bound in bounds.items():
        plus = sum(p for (b, _), (p, _) in counts.items() if b == branch)
        total = sum(n for (b, _), (_, n) in counts.items() if b == branch)
        p, se = proportion(plus, total)
        by_depth = {}
        for depth in ('early', 'late'):
            dp, dn = counts.get((branch, depth), (0, 0))
            by_depth[depth] = {'plus': dp, 'count': dn, 'p': proportion(dp, dn)[0]}
        report[branch] = {
            'plus': plus,
            'count': total,
            'p': p,
            'se': se,
            'bound': bound,
            'passed': total == 0 or p >= bound - 3 * se,
            'by_depth': by_depth,
        }
    return report


def verify_replica(env, cfg, seed, horizon, sequenced, replica):
    """Every pathwise check and count statistic for one coupled replica."""
    q = env.laws[0]
    traj = simulate(env, seed, horizon, replica)
    E, timeline = build_E(traj, cfg, sequenced)
    H, K, bundle = build_H_K(traj, cfg, timeline)
    sandwich = sandwich_check(bundle, traj, cfg)
    ordering = trigger_ordering_violations(timeline)
    exits = block_exit_stats(bundle)
    return {
        'replica': replica,
        'records': len(timeline),
        'completed': len(timeline.completed()),
        'ordering_violations': len(ordering),
        'ordering_examples': ordering[:3],
        'dominance': {k: v for k, v in bundle.dominance.items()},
        'sandwich': sandwich.to_dict(),
        'counts_T': arrow_counts(timeline, cfg, 'T'),
        'counts_V': arrow_counts(timeline, cfg, 'V'),
        'landings': landing_stats(traj, cfg, timeline, q),
        'block_exit': (exits['stays'], exits['transitions']),
        'h_ratio': h_ratio_diagnostics(bundle, traj, cfg),
    }


def _m_walk_rate(cfg, q, seed, horizon, replica):
    path = walk_from_arrows(build_M(cfg, q, seed, replica), horizon)
    return float(path[-1]) / horizon


def m_walk_speed(cfg, q, replicas, horizon, seed, level=0.99, mapper=map):
    """Mean speed of the walk driven by M over ``replicas`` independent systems."""
    rates = list(mapper(partial(_m_walk_rate, cfg, q, seed, horizon), range(replicas)))
    return aggregate_naive(rates, level, ci='mean', seed=seed, horizon=horizon)
