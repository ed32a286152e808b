"""Speed estimation through cut times, plus the escape probability alpha.

A cut time is a step from a strict running maximum by the largest possible
jump after which the walk never comes back below the landing point. Between
consecutive cut times the increments (Delta tau, Delta J) are i.i.d., so the
speed is the ratio of their means.
"""

import logging
import math
from dataclasses import asdict, dataclass
from functools import partial

import numpy as np

from .criteria import total_drift
from .errors import InsufficientRenewalsError, PreconditionError
from .stats import percentile_interval, proportion, ratio_interval, t_interval, z_from_confidence
from .walk_core import simulate

logger = logging.getLogger(__name__)

DEFAULT_LEVEL = 0.99


@dataclass(frozen=True)
class CutTimeRecord:
    tau: int
    J: int

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SpeedEstimate:
    point: float
    ci_low: float
    ci_high: float
    n_renewals: int
    method: str
    se: float = 0.0
    seed: int = None
    replicas: int = 1
    horizon: int = None

    def to_dict(self):
        return asdict(self)

    def excludes_zero(self):
        return self.ci_low > 0 or self.ci_high < 0


def default_guard(env):
    """Guard window 10 L^2 / max(delta - 1, 0.1), rounded up."""
    delta = total_drift(env)
    return int(math.ceil(10 * env.L ** 2 / max(delta - 1.0, 0.1)))


def cut_time_mask(positions, L):
    """Boolean mask over ``t < T`` of steps meeting all three cut-time conditions."""
    y = np.asarray(positions, dtype=np.int64)
    if len(y) < 2:
        return np.zeros(0, dtype=bool)
    jumps = np.diff(y) == L
    previous_max = np.full(len(y) - 1, np.iinfo(np.int64).min, dtype=np.int64)
    if len(y) > 2:
        previous_max[1:] = np.maximum.accumulate(y[:-2])
    fresh_max = y[:-1] > previous_max
    suffix_min = np.minimum.accumulate(y[::-1])[::-1]
    never_below = suffix_min[1:] == y[1:]
    return jumps & fresh_max & never_below


def detect_cut_times(traj, guard):
    """Cut times of ``traj`` with at least ``guard`` observed steps after them."""
    if guard < 1:
        raise PreconditionError(f"guard must be >= 1, got {guard}")
    mask = cut_time_mask(traj.positions, traj.env.L)
    taus = np.flatnonzero(mask)
    taus = taus[taus + guard <= traj.horizon]
    J = traj.positions[taus]
    logger.debug("replica %d: %d cut times (guard %d)", traj.replica, len(taus), guard)
    return [CutTimeRecord(int(tau), int(j)) for tau, j in zip(taus, J)]


def is_cut_time(positions, tau, L):
    """Direct re-check of the three defining conditions at ``tau``."""
    y = positions
    if tau + 1 >= len(y) or y[tau + 1] - y[tau] != L:
        return False
    if any(y[s] >= y[tau] for s in range(tau)):
        return False
    return all(y[u] >= y[tau + 1] for u in range(tau + 1, len(y)))


def estimate_speed_renewal(records, level=DEFAULT_LEVEL):
    """Ratio of mean displacement to mean duration between consecutive cut times.

    The first record only anchors the sequence; its absolute position and
    time never enter the means.
    """
    if len(records) < 3:
        raise InsufficientRenewalsError(len(records))
    taus = np.array([r.tau for r in records], dtype=float)
    J = np.array([r.J for r in records], dtype=float)
    point, low, high, se = ratio_interval(np.diff(J), np.diff(taus), level)
    return SpeedEstimate(point, min(low, point), max(high, point), len(records), 'renewal', se)


def estimate_speed_naive(traj):
    if traj.horizon < 1:
        raise PreconditionError("naive speed needs horizon >= 1")
    point = float(traj.positions[-1]) / traj.horizon
    return SpeedEstimate(point, point, point, 0, 'naive', seed=traj.seed, horizon=traj.horizon)


def aggregate_naive(points, level=DEFAULT_LEVEL, ci='percentile', seed=None, horizon=None):
    """Combine per-replica naive speeds.

    ``ci='percentile'`` gives the replica percentile interval, ``ci='mean'`` a
    Student-t interval for the mean speed.
    """
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        raise PreconditionError("no replica speeds to aggregate")
    mean = float(points.mean())
    if ci == 'mean':
        _, low, high = t_interval(points, level)
    elif ci == 'percentile':
        low, high = percentile_interval(points, level)
    else:
        raise PreconditionError(f"unknown interval kind {ci!r}")
    se = float(points.std(ddof=1) / math.sqrt(points.size)) if points.size > 1 else 0.0
    return SpeedEstimate(mean, min(low, mean), max(high, mean), 0, f'naive-{ci}', se,
                         seed=seed, replicas=int(points.size), horizon=horizon)


def relative_difference(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def exactly_once_blocks(traj, L=None):
    """Return ``(count, explored)`` for blocks ``[jL, (j+1)L - 1]``, ``j >= 0``.

    Only blocks lying entirely below the final running maximum are examined;
    ``count`` of them were occupied at exactly one time.
    """
    L = traj.env.L if L is None else L
    y = traj.positions
    top = int(y.max())
    explored = top // L if top > 0 else 0
    if explored == 0:
        return 0, 0
    blocks = np.floor_divide(y, L)
    blocks = blocks[(blocks >= 0) & (blocks < explored)]
    occupancy = np.bincount(blocks, minlength=explored)
    return int(np.count_nonzero(occupancy == 1)), explored


def estimator_sandwich_violations(traj, records):
    """Times t between consecutive cut times where ``J_k/tau_{k+1} <= Y_t/t <= J_{k+1}/tau_k`` fails."""
    usable = [r for r in records if r.tau > 0]
    if len(usable) < 2:
        return []
    taus = np.array([r.tau for r in usable], dtype=np.int64)
    J = np.array([r.J for r in usable], dtype=np.int64)
    t = np.arange(taus[0] + 1, taus[-1], dtype=np.int64)
    t = t[~np.isin(t, taus)]
    k = np.searchsorted(taus, t, side='right') - 1
    y = traj.positions[t]
    lower_ok = J[k] * t <= y * taus[k + 1]
    upper_ok = y * taus[k] <= J[k + 1] * t
    return t[~(lower_ok & upper_ok)].tolist()


def guard_stability(traj, guard, level=DEFAULT_LEVEL):
    """Renewal estimate at ``guard`` and ``2 * guard`` and their relative change."""
    first = estimate_speed_renewal(detect_cut_times(traj, guard), level)
    second = estimate_speed_renewal(detect_cut_times(traj, 2 * guard), level)
    return {
        'guard': guard,
        'speed': first.point,
        'speed_doubled_guard': second.point,
        'relative_change': relative_difference(first.point, second.point),
        'n_renewals': first.n_renewals,
        'n_renewals_doubled_guard': second.n_renewals,
    }


def _min_position(env, seed, horizon, replica):
    return int(simulate(env, seed, horizon, replica).positions.min())


def _origin_returns(env, seed, horizon, replica):
    positions = simulate(env, seed, horizon, replica).positions
    return int(np.count_nonzero(positions[1:] == 0))


@dataclass(frozen=True)
class AlphaEstimate:
    point: float
    se: float
    ci_low: float
    ci_high: float
    replicas: int
    horizon: int
    seed: int

    def to_dict(self):
        return asdict(self)


def estimate_alpha(env, replicas, horizon, seed, level=DEFAULT_LEVEL, mapper=map):
    """Fraction of replicas never below 0 up to ``horizon``.

    The finite-horizon frequency overestimates alpha and decreases with the
    horizon, which is recorded with the estimate.
    """
    if total_drift(env) <= 1:
        logger.warning("alpha requested for a recurrent environment (delta=%.4g); it is 0",
                       total_drift(env))
    minima = list(mapper(partial(_min_position, env, seed, horizon), range(replicas)))
    survived = sum(1 for m in minima if m >= 0)
    p, se = proportion(survived, replicas)
    z = z_from_confidence(level)
    return AlphaEstimate(p, se, max(p - z * se, 0.0), min(p + z * se, 1.0), replicas, horizon, seed)


def recurrence_sanity(env, replicas, horizon, seed, min_returns=10, mapper=map):
    """Fraction of replicas returning to the origin at least ``min_returns`` times."""
    returns = list(mapper(partial(_origin_returns, env, seed, horizon), range(replicas)))
    hits = sum(1 for r in returns if r >= min_returns)
    return {
        'replicas': replicas,
        'horizon': horizon,
        'min_returns': min_returns,
        'fraction': hits / replicas if replicas else float('nan'),
        'median_returns': float(np.median(returns)) if returns else float('nan'),
    }


def run_replica(env, seed, horizon, guard, level, replica):
    """All per-replica speed quantities, as a plain dict so shards can be merged."""
    traj = simulate(env, seed, horizon, replica)
    records = detect_cut_times(traj, guard)
    naive = estimate_speed_naive(traj)
    row = {
        'seed': seed,
        'replica': replica,
        'naive': naive.point,
        'n_renewals': len(records),
        'min_position': int(traj.positions.min()),
        'sandwich_violations': len(estimator_sandwich_violations(traj, records)),
    }
    try:
        renewal = estimate_speed_renewal(records, level)
        row.update(renewal=renewal.point, renewal_low=renewal.ci_low,
                   renewal_high=renewal.ci_high)
    except InsufficientRenewalsError as e:
        logger.debug("replica %d: %s", replica, e)
        row.update(renewal=None, renewal_low=None, renewal_high=None)
    row['once_blocks'], row['explored_blocks'] = exactly_once_blocks(traj)
    return row
