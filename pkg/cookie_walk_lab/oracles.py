"""Independent verifiers for the auxiliary lemmas the coupling relies on.

Each check drives the process under test and its comparison object from one
shared uniform stream, so almost-sure inequalities become per-path assertions.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import kstest, rv_discrete

from .errors import CouplingViolationError, HypothesisViolationError, PreconditionError
from .stats import RunningStats
from .uniforms import ORACLE_DOMAIN, UniformSource
from .walk_core import WalkState, coin

logger = logging.getLogger(__name__)


def two_point_quantile(p, u):
    """Inverse CDF of the law with P(+1) = p on {-1, +1}: +1 iff u > 1 - p."""
    return -1 if u <= 1.0 - p else 1


def ssrw_sampler(replica):
    """Simple symmetric walk; the extremal process the exit-time bound allows."""
    def step(x, u):
        return x + coin(u)
    return step


def cookie_walk_sampler(env):
    """Sampler factory for the excited walk of ``env`` restarted for each replica."""
    def factory(replica):
        state = None

        def step(x, u):
            nonlocal state
            if state is None:
                state = WalkState(position=x, visits={x: 1}, running_max=x, running_min=x)
            state.step(env, u)
            return state.position
        return step
    return factory


def exit_time_bound(a, b):
    """(b - a) 2^(2(b-a)+1), the bound on the second moment of the exit time."""
    width = b - a
    return width * 2 ** (2 * width + 1)


@dataclass(frozen=True)
class ExitTimeSample:
    T: int
    exit_side: str
    a: int
    b: int

    def to_dict(self):
        return asdict(self)


def _check_interval(a, b):
    if a >= b:
        raise PreconditionError(f"interval needs a < b, got ({a}, {b})")


def run_exit(step, uniforms, a, b, start, max_steps=None):
    """Drive ``step`` from ``start`` until it leaves ``(a, b)``.

    Every increment is compared with the +-1 coin on the same uniform; an
    increment below the coin raises HypothesisViolationError at that step.
    Returns ``None`` when ``max_steps`` or the stream runs out first.
    """
    x = start
    t = 0
    for u in uniforms:
        if x <= a or x >= b:
            break
        if max_steps is not None and t >= max_steps:
            return None
        nxt = step(x, u)
        if nxt - x < coin(u):
            raise HypothesisViolationError(
                f"increment {nxt - x} below coin {coin(u)} at step {t}", index=t)
        x = nxt
        t += 1
    if a < x < b:
        return None
    return ExitTimeSample(t, 'left' if x <= a else 'right', a, b)


def exit_time_moments(process_sampler, a, b, replicas, seed, start=None, max_steps=None):
    """Empirical first and second moments of the exit time of ``(a, b)``.

    ``process_sampler(replica)`` returns a ``step(x, u)`` callable. The walk
    starts at ``start`` (midpoint by default); the report's ``passed`` compares
    E[T^2] with the bound plus three standard errors.
    """
    _check_interval(a, b)
    start = (a + b) // 2 if start is None else start
    first = RunningStats()
    second = RunningStats()
    sides = {'left': 0, 'right': 0}
    censored = 0
    for replica in range(replicas):
        stream = UniformSource(seed, replica, ORACLE_DOMAIN).stream()
        sample = run_exit(process_sampler(replica), stream, a, b, start, max_steps)
        if sample is None:
            censored += 1
            continue
        first.update(sample.T)
        second.update(sample.T * sample.T)
        sides[sample.exit_side] += 1
    bound = exit_time_bound(a, b)
    report = {
        'a': a,
        'b': b,
        'start': start,
        'replicas': replicas,
        'censored': censored,
        'mean_T': first.mean,
        'se_mean_T': first.se,
        'second_moment': second.mean,
        'se_second_moment': second.se,
        'bound': bound,
        'exits_left': sides['left'],
        'exits_right': sides['right'],
        'passed': censored == 0 and second.mean <= bound + 3.0 * second.se,
    }
    logger.info("exit time on (%d, %d): E[T^2]=%.4g, bound %d", a, b, second.mean, bound)
    return report


def first_up_block(uniforms, width):
    """1-based index G of the first block of ``width`` uniforms all below 1/2, or None."""
    u = np.asarray(uniforms, dtype=float)
    blocks = len(u) // width
    if blocks == 0:
        return None
    up = np.all(u[:blocks * width].reshape(blocks, width) < 0.5, axis=1)
    hits = np.flatnonzero(up)
    return int(hits[0]) + 1 if hits.size else None


def geometric_block_bound(uniform_stream, a, b, horizon=None, start=None, step=None):
    """Pathwise check of ``T <= G (b - a)`` on one uniform sequence.

    ``step`` defaults to the simple symmetric walk. Both ``T`` and ``G`` are
    read from the same uniforms; ``holds`` is None when the sequence is too
    short to decide.
    """
    _check_interval(a, b)
    width = b - a
    start = (a + b) // 2 if start is None else start
    uniforms = list(uniform_stream if horizon is None else
                    (u for u, _ in zip(uniform_stream, range(horizon))))
    step = ssrw_sampler(0) if step is None else step
    sample = run_exit(step, uniforms, a, b, start)
    G = first_up_block(uniforms, width)
    if sample is None:
        # not exited within the sequence: a violation once G has been seen
        holds = False if G is not None else None
    elif G is None:
        # G exceeds the number of complete blocks read
        holds = True if sample.T <= (len(uniforms) // width + 1) * width else None
    else:
        holds = sample.T <= G * width
    return {
        'T': None if sample is None else sample.T,
        'G': G,
        'width': width,
        'holds': holds,
    }


def geometric_block_scan(a, b, replicas, seed, horizon=None):
    """Run :func:`geometric_block_bound` on ``replicas`` oracle streams; count violations."""
    width = b - a
    horizon = horizon or max(64 * width * 2 ** width, 1024)
    violations = []
    undecided = 0
    for replica in range(replicas):
        uniforms = UniformSource(seed, replica, ORACLE_DOMAIN).block(0, horizon)
        result = geometric_block_bound(uniforms, a, b, start=None)
        if result['holds'] is False:
            violations.append(replica)
        elif result['holds'] is None:
            undecided += 1
    return {
        'replicas': replicas,
        'horizon': horizon,
        'violations': violations,
        'undecided': undecided,
        'passed': not violations,
    }


@dataclass
class SlopeReport:
    n: int
    K: float
    slope: float
    tolerance: float
    passed: bool
    batch_warnings: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def martingale_lln_check(xi_sampler, K, n_max, seed=0, batch=1000):
    """Finite-n reading of the strong law for differences with E[xi^2 | past] <= K^2.

    ``xi_sampler`` is either an array of increments or a callable mapping an
    array of oracle uniforms to increments. The slope ``X_n / n`` must stay
    below ``K + 3 K / sqrt(n)``. Batches whose empirical second moment exceeds
    ``K^2`` by more than five standard errors are logged and listed.
    """
    if K <= 0:
        raise PreconditionError(f"K must be positive, got {K}")
    if callable(xi_sampler):
        xi = xi_sampler(UniformSource(seed, 0, ORACLE_DOMAIN).block(0, n_max))
    else:
        xi = xi_sampler
    xi = np.asarray(xi, dtype=float)[:n_max]
    n = xi.size
    if n == 0:
        raise PreconditionError("no increments to check")
    warnings = []
    for start in range(0, n, batch):
        squares = xi[start:start + batch] ** 2
        if squares.size < 2:
            continue
        se = float(squares.std(ddof=1)) / math.sqrt(squares.size)
        excess = float(squares.mean()) - K * K
        if excess > 5.0 * se and excess > 0:
            logger.warning("batch at %d: second moment %.4g exceeds K^2=%.4g",
                           start, squares.mean(), K * K)
            warnings.append(start)
    slope = float(xi.sum()) / n
    tolerance = 3.0 * K / math.sqrt(n)
    return SlopeReport(n, K, slope, tolerance, slope <= K + tolerance, warnings)


@dataclass
class StrassenPair:
    x_hat: np.ndarray
    y: np.ndarray

    @property
    def strict_rate(self):
        return float(np.mean(self.x_hat > self.y)) if self.y.size else math.nan


def _law_at(laws, i):
    if hasattr(laws, 'ppf'):
        return laws
    if callable(laws):
        return laws(i)
    return laws[i]


def strassen_pair(G_laws, X_sampler, seed, n, tol=1e-12):
    """Couple ``X`` above independent ``Y_i ~ G_i`` by inverse CDFs on one uniform per index.

    ``G_laws`` is a frozen scipy law (i.i.d.), a sequence of them, or a
    callable ``i -> law``. ``X_sampler`` is a frozen law or a callable
    ``(i, past) -> law`` giving the conditional law of X_i given
    ``X_0..X_{i-1}``. Raises CouplingViolationError at the first index where
    ``X_i < Y_i``.
    """
    u = UniformSource(seed, 0, ORACLE_DOMAIN).block(0, n)
    if hasattr(X_sampler, 'ppf') and hasattr(G_laws, 'ppf'):
        x_hat = np.asarray(X_sampler.ppf(u), dtype=float)
        y = np.asarray(G_laws.ppf(u), dtype=float)
    else:
        x_hat = np.empty(n)
        y = np.empty(n)
        for i in range(n):
            law = X_sampler if hasattr(X_sampler, 'ppf') else X_sampler(i, x_hat[:i])
            x_hat[i] = law.ppf(u[i])
            y[i] = _law_at(G_laws, i).ppf(u[i])
    bad = np.flatnonzero(x_hat < y - tol)
    if bad.size:
        i = int(bad[0])
        raise CouplingViolationError(
            f"X_{i} = {x_hat[i]:.6g} below Y_{i} = {y[i]:.6g}", index=i)
    return StrassenPair(x_hat, y)


def ks_distance(sample, law):
    """Sup distance between the empirical CDF of ``sample`` and ``law.cdf``.

    Discrete laws are compared at their atoms only, where the left-limit term
    of the usual statistic would count every atom mass as a discrepancy.
    """
    sample = np.sort(np.asarray(sample, dtype=float))
    if not isinstance(getattr(law, 'dist', None), rv_discrete):
        return float(kstest(sample, law.cdf).statistic)
    atoms = np.unique(sample)
    empirical = np.searchsorted(sample, atoms, side='right') / sample.size
    return float(np.max(np.abs(empirical - law.cdf(atoms))))


def ks_distances(pair, x_law, g_law):
    """Distances of both coupled components from their declared laws."""
    return {
        'x_hat': ks_distance(pair.x_hat, x_law),
        'y': ks_distance(pair.y, g_law),
    }
