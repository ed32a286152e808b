"""Drift quantities and the ballisticity condition."""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import partial

from scipy.optimize import bisect

from .distributions import JumpDistribution
from .errors import InvalidEnvironmentError, NoFrontierError, PreconditionError

logger = logging.getLogger(__name__)


class Classification(str, Enum):
    RECURRENT = 'recurrent'
    TRANSIENT = 'transient'


def tail_Q(q, j):
    """Q(j) = sum of q(k) over k >= j."""
    return q.tail(j)


def mean_drift(q):
    return q.mean


def total_drift(env):
    """delta: the sum of the mean jumps of the C excited laws."""
    return math.fsum(law.mean for law in env.laws)


def classify(delta):
    if delta < 0:
        raise InvalidEnvironmentError(f"total drift {delta} is negative")
    return Classification.RECURRENT if delta <= 1 else Classification.TRANSIENT


def _check_pair(c, ell):
    if c < 3:
        raise PreconditionError(f"c must be >= 3, got {c}")
    if ell < 3 * c:
        raise PreconditionError(f"ell must be >= 3c = {3 * c}, got {ell}")


def condition_lhs(q, c, ell):
    """2 (1 - (c-1)/ell) Q(ell + c - 1) - 1."""
    return 2.0 * (1.0 - (c - 1) / ell) * q.tail(ell + c - 1) - 1.0


def arrow_bound(q, c, ell):
    """Lower bound (1 - (c-1)/ell) Q(ell + c - 1) on P(arrow = +1) after a cookie hit."""
    return (1.0 - (c - 1) / ell) * q.tail(ell + c - 1)


@dataclass
class CriteriaReport:
    c: int
    ell: int
    delta: float
    Q_table: dict
    condition_lhs: float
    condition_rhs: float
    satisfied: bool
    classification: Classification
    drift_consistent: bool = True
    q1_above_half: bool = True
    frontier: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            'c': self.c,
            'ell': self.ell,
            'delta': self.delta,
            'Q_table': {str(j): v for j, v in self.Q_table.items()},
            'condition_lhs': self.condition_lhs,
            'condition_rhs': self.condition_rhs,
            'satisfied': self.satisfied,
            'classification': self.classification.value,
            'drift_consistent': self.drift_consistent,
            'q1_above_half': self.q1_above_half,
            'frontier': dict(self.frontier),
        }


def ballisticity_condition(q, c, ell):
    """Evaluate the sufficient condition for positive speed at ``(c, ell)``.

    Besides the strict comparison lhs > 2/c the report records whether the
    implied consequences delta > 2 and Q(1) > 1/2 hold.
    """
    _check_pair(c, ell)
    delta = q.mean
    lhs = condition_lhs(q, c, ell)
    rhs = 2.0 / c
    satisfied = lhs > rhs
    report = CriteriaReport(
        c=c,
        ell=ell,
        delta=delta,
        Q_table={j: q.tail(j) for j in range(-1, q.L + 2)},
        condition_lhs=lhs,
        condition_rhs=rhs,
        satisfied=satisfied,
        classification=classify(delta),
        drift_consistent=(not satisfied) or delta > 2,
        q1_above_half=(not satisfied) or q.tail(1) > 0.5,
    )
    if not (report.drift_consistent and report.q1_above_half):
        logger.warning("condition satisfied at (c=%d, ell=%d) but delta=%.6g, Q(1)=%.6g",
                       c, ell, delta, q.tail(1))
    return report


def search_parameters(q):
    """First ``(c, ell)`` in increasing-c-then-ell order satisfying the condition."""
    L = q.L
    for c in range(3, L + 1):
        for ell in range(3 * c, L - c + 2):
            if condition_lhs(q, c, ell) > 2.0 / c:
                logger.debug("condition first satisfied at c=%d, ell=%d", c, ell)
                return c, ell
    return None


def closed_form_frontier(c, ell):
    """Largest epsilon for which the two-atom family satisfies the condition."""
    ratio = 1.0 - (c - 1) / ell
    return (1.0 - 2.0 * (c - 1) / ell - 2.0 / c) / (2.0 * ratio)


def frontier_epsilon(c, ell, family=None, tol=1e-9):
    """Root of ``lhs(eps) = 2/c`` on [0, 1] for a family decreasing in eps.

    ``family`` maps epsilon to a JumpDistribution and defaults to the
    two-atom family with ``L = ell + c - 1``.
    """
    _check_pair(c, ell)
    if family is None:
        family = partial(JumpDistribution.epsilon_family, ell + c - 1)
    rhs = 2.0 / c

    def gap(eps):
        return condition_lhs(family(eps), c, ell) - rhs

    low, high = gap(0.0), gap(1.0)
    if low <= 0 or high >= 0:
        raise NoFrontierError(
            f"condition does not change sign on [0, 1] at c={c}, ell={ell} "
            f"(gap {low:.6g} at 0, {high:.6g} at 1)")
    return bisect(gap, 0.0, 1.0, xtol=tol / 8)


def sweep_epsilon(L, c, ell, epsilons):
    """Condition rows over the two-atom family for each epsilon."""
    rows = []
    for eps in epsilons:
        q = JumpDistribution.epsilon_family(L, eps)
        report = ballisticity_condition(q, c, ell)
        rows.append({
            'epsilon': eps,
            'delta': report.delta,
            'condition_lhs': report.condition_lhs,
            'condition_rhs': report.condition_rhs,
            'satisfied': report.satisfied,
        })
    return rows
