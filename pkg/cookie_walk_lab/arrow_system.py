"""Arrow systems and the nearest-neighbour walks they generate.

An arrow system assigns to every vertex ``j`` an infinite stack of +1/-1
arrows ``E(j, 1), E(j, 2), ...``. The walk driven by ``E`` leaves ``j`` on its
k-th visit in the direction ``E(j, k)``. Only stacks that were written to are
stored; every other arrow reads as +1.
"""

import logging
import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from .errors import InvalidPathError
from .oracles import two_point_quantile
from .stats import RunningStats, combined_se
from .uniforms import ArrowUniforms

logger = logging.getLogger(__name__)

ARROWS = (-1, 1)


class ArrowSystem:
    """Sparse arrow stacks with default +1 beyond the materialized prefix."""

    def __init__(self, stacks=None):
        self._stacks = {}
        for j, arrows in (stacks or {}).items():
            for v in arrows:
                self.push(j, v)

    def default(self, j, k):
        return 1

    def get(self, j, k):
        stack = self._stacks.get(j)
        if stack is not None and k <= len(stack):
            return stack[k - 1]
        return self.default(j, k)

    def _materialize(self, j, k):
        stack = self._stacks.setdefault(j, [])
        while len(stack) < k:
            stack.append(self.default(j, len(stack) + 1))
        return stack

    def set(self, j, k, v):
        if v not in ARROWS:
            raise ValueError(f"arrow value must be -1 or +1, got {v}")
        if k < 1:
            raise ValueError(f"arrow index must be >= 1, got {k}")
        self._materialize(j, k)[k - 1] = v

    def push(self, j, v):
        """Append ``v`` on top of the materialized prefix of stack ``j``; return its index."""
        if v not in ARROWS:
            raise ValueError(f"arrow value must be -1 or +1, got {v}")
        stack = self._stacks.setdefault(j, [])
        stack.append(v)
        return len(stack)

    def depth(self, j):
        return len(self._stacks.get(j, ()))

    def vertices(self):
        return sorted(self._stacks)

    def stack(self, j, n=None):
        n = self.depth(j) if n is None else n
        return [self.get(j, k) for k in range(1, n + 1)]

    def prefix_sums(self, j, n):
        return np.cumsum(np.asarray(self.stack(j, n), dtype=np.int64))

    def materialized(self):
        """Iterate ``(j, k, v)`` over stored arrows in vertex then index order."""
        for j in sorted(self._stacks):
            for k, v in enumerate(self._stacks[j], start=1):
                yield j, k, v

    def count(self):
        return sum(len(s) for s in self._stacks.values())

    def dump(self):
        return ''.join(f"{j} {k} {v}\n" for j, k, v in self.materialized())

    @classmethod
    def load(cls, text):
        system = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            try:
                j, k, v = (int(field) for field in line.split())
            except ValueError as e:
                raise ValueError(f"line {lineno}: expected 'j k v', got {line!r}") from e
            system.set(j, k, v)
        return system

    def snapshot(self):
        copy = ArrowSystem()
        copy._stacks = {j: list(s) for j, s in self._stacks.items()}
        return copy

    def __repr__(self):
        return f"{type(self).__name__}(stacks={len(self._stacks)}, arrows={self.count()})"


@dataclass(frozen=True)
class ArrowLaw:
    """P(arrow = +1) is ``p_cookie`` for the first ``c`` arrows of a stack and 1/2 after."""

    c: int
    p_cookie: float

    def __call__(self, k):
        return self.p_cookie if k <= self.c else 0.5

    @property
    def drift(self):
        """Total drift c (2p - 1) of the nearest-neighbour walk built from this law."""
        return self.c * (2.0 * self.p_cookie - 1.0)


class SampledArrowSystem(ArrowSystem):
    """Independent arrows, ``E(j, k) = +1`` iff ``uniform(j, k) > 1 - law(k)``.

    Arrows are drawn on first read from the counter-based arrow stream of
    ``(seed, replica)`` and then kept, so dumps show what a walk consumed.
    """

    def __init__(self, law, seed, replica=0):
        super().__init__()
        self.law = law
        self.uniforms = ArrowUniforms(seed, replica)
        self._pages = {}

    def uniform(self, j, k):
        band, page, offset = self.uniforms.locate(j, k)
        values = self._pages.get((band, page))
        if values is None:
            values = self.uniforms.page(band, page).tolist()
            self._pages[(band, page)] = values
        return values[offset]

    def default(self, j, k):
        return two_point_quantile(self.law(k), self.uniform(j, k))

    def get(self, j, k):
        stack = self._stacks.get(j)
        if stack is not None and k <= len(stack):
            return stack[k - 1]
        return self._materialize(j, k)[k - 1]


class LocalTimeLedger:
    """Visit counts ``m_t(j)``, including the visit at the current time."""

    def __init__(self, start=0):
        self.counts = {start: 1}
        self.current = start

    @property
    def M(self):
        return self.counts[self.current]

    def arrive(self, vertex):
        self.current = vertex
        self.counts[vertex] = self.counts.get(vertex, 0) + 1
        return self.counts[vertex]

    @property
    def total(self):
        return sum(self.counts.values())


def walk_from_arrows(E, horizon, ledger=None):
    """Positions ``X_0..X_T`` with ``X_{t+1} = X_t + E(X_t, M_t)``."""
    if horizon < 0:
        raise ValueError(f"horizon must be non-negative, got {horizon}")
    ledger = LocalTimeLedger() if ledger is None else ledger
    counts = ledger.counts
    get = E.get
    x = ledger.current
    path = [x]
    append = path.append
    for _ in range(horizon):
        x += get(x, counts[x])
        counts[x] = counts.get(x, 0) + 1
        append(x)
    ledger.current = x
    return np.asarray(path, dtype=np.int64)


def extract_arrows(path):
    """Arrow system whose k-th arrow at j is the direction of the k-th departure from j."""
    path = np.asarray(path, dtype=np.int64)
    steps = np.diff(path)
    bad = np.flatnonzero(np.abs(steps) != 1)
    if bad.size:
        t = int(bad[0])
        raise InvalidPathError(f"increment {int(steps[t])} at step {t} is not +-1", index=t)
    E = ArrowSystem()
    for j, v in zip(path[:-1].tolist(), steps.tolist()):
        E.push(j, v)
    return E


def first_dominance_failure(E, E_prime, window, depth=None):
    """First ``(j, m)`` where a prefix sum of ``E`` falls below that of ``E_prime``.

    Without ``depth`` each stack is compared down to the deeper of its two
    materialized prefixes, which is exhaustive for systems defaulting to +1.
    """
    for j in window:
        n = depth if depth is not None else max(E.depth(j), E_prime.depth(j))
        ours = E.prefix_sums(j, n)
        theirs = E_prime.prefix_sums(j, n)
        below = np.flatnonzero(ours < theirs)
        if below.size:
            return j, int(below[0]) + 1
    return None


def dominates(E, E_prime, window, depth):
    """True iff every prefix sum of ``E`` up to ``depth`` majorizes ``E_prime`` on ``window``."""
    return first_dominance_failure(E, E_prime, window, depth) is None


def limsup_proxy(path, burn_in=None):
    """``max X_t / t`` over ``t`` in ``[burn_in, T]``; ``burn_in`` defaults to ``T // 2``."""
    path = np.asarray(path, dtype=np.int64)
    T = len(path) - 1
    if T < 1:
        raise ValueError("limsup proxy needs at least one step")
    start = max(T // 2 if burn_in is None else burn_in, 1)
    t = np.arange(start, T + 1)
    return float(np.max(path[start:] / t))


def _proxy_pair(high, low, seed, horizon, burn_in, replica):
    upper = walk_from_arrows(SampledArrowSystem(high, seed, replica), horizon)
    lower = walk_from_arrows(SampledArrowSystem(low, seed, replica), horizon)
    return limsup_proxy(upper, burn_in), limsup_proxy(lower, burn_in)


def monotonicity_check(high, low, replicas, horizon, seed, burn_in=None, mapper=map):
    """Compare limsup proxies of walks from two arrow laws sharing one uniform per arrow.

    With ``high(k) >= low(k)`` the two systems are ordered arrow by arrow, so
    the faster law should not produce a smaller proxy beyond two combined
    standard errors.
    """
    pairs = list(mapper(partial(_proxy_pair, high, low, seed, horizon, burn_in), range(replicas)))
    upper = RunningStats().extend(p for p, _ in pairs)
    lower = RunningStats().extend(p for _, p in pairs)
    se = combined_se(upper.se, lower.se)
    gap = upper.mean - lower.mean
    return {
        'replicas': replicas,
        'horizon': horizon,
        'proxy_high': upper.mean,
        'proxy_low': lower.mean,
        'combined_se': se,
        'passed': gap >= -2.0 * se,
        'pairwise_order_rate': sum(1 for p, q in pairs if p >= q) / max(replicas, 1),
    }


def arrow_frequencies(system, vertices, depth):
    """Empirical ``P(+1)`` for arrows with index ``<= depth`` and beyond, plus counts."""
    early = [0, 0]
    late = [0, 0]
    for j in vertices:
        for k, v in enumerate(system.stack(j), start=1):
            bucket = early if k <= depth else late
            bucket[0] += v == 1
            bucket[1] += 1
    return {
        'early_plus': early[0] / early[1] if early[1] else math.nan,
        'early_count': early[1],
        'late_plus': late[0] / late[1] if late[1] else math.nan,
        'late_count': late[1],
    }
