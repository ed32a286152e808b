"""Jump distributions and cookie environments."""

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

from .errors import InvalidDistributionError, InvalidEnvironmentError

logger = logging.getLogger(__name__)

# Accepted slack on the total mass before normalization.
MASS_TOLERANCE = 1e-9


@dataclass(frozen=True)
class JumpDistribution:
    """A finite law on integer jumps bounded below by -1.

    Atoms with zero probability are dropped, the remaining masses are
    renormalized to sum to one, and the support is kept in ascending order.
    """

    support: tuple
    probs: tuple

    def __post_init__(self):
        support = tuple(int(k) for k in self.support)
        probs = tuple(float(p) for p in self.probs)
        if len(support) != len(probs):
            raise InvalidDistributionError(
                f"support has {len(support)} entries but probs has {len(probs)}")
        if not support:
            raise InvalidDistributionError("distribution is empty")
        if len(set(support)) != len(support):
            raise InvalidDistributionError("support contains duplicate jumps")
        for k, p in zip(support, probs):
            if not math.isfinite(p) or p < 0:
                raise InvalidDistributionError(f"probability of jump {k} is {p}")
        total = math.fsum(probs)
        if abs(total - 1.0) > MASS_TOLERANCE:
            raise InvalidDistributionError(f"probabilities sum to {total!r}, expected 1")

        atoms = sorted((k, p / total) for k, p in zip(support, probs) if p > 0)
        if atoms[0][0] < -1:
            raise InvalidDistributionError(
                f"jump {atoms[0][0]} is below -1; walks must be skip-free to the left")
        object.__setattr__(self, 'support', tuple(k for k, _ in atoms))
        object.__setattr__(self, 'probs', tuple(p for _, p in atoms))

    @classmethod
    def from_mapping(cls, mapping):
        """Build from ``{jump: probability}``; JSON string keys are accepted."""
        items = sorted((int(k), float(v)) for k, v in mapping.items())
        return cls(tuple(k for k, _ in items), tuple(p for _, p in items))

    @classmethod
    def epsilon_family(cls, L, epsilon):
        """The two-atom law ``{-1: epsilon, L: 1 - epsilon}``."""
        if L < 1:
            raise InvalidDistributionError(f"L must be >= 1, got {L}")
        if not 0.0 <= epsilon <= 1.0:
            raise InvalidDistributionError(f"epsilon must lie in [0, 1], got {epsilon}")
        return cls((-1, L), (epsilon, 1.0 - epsilon))

    @classmethod
    def symmetric(cls):
        return cls((-1, 1), (0.5, 0.5))

    @classmethod
    def from_json(cls, source):
        """Parse ``{"support": [...], "probs": [...]}`` or ``{"L": .., "epsilon": ..}``.

        ``source`` may be a dict or a JSON document.
        """
        data = json.loads(source) if isinstance(source, (str, bytes)) else dict(source)
        if 'support' in data or 'probs' in data:
            try:
                return cls(tuple(data['support']), tuple(data['probs']))
            except KeyError as e:
                raise InvalidDistributionError(f"missing key {e.args[0]!r}") from e
        if 'L' in data:
            return cls.epsilon_family(int(data['L']), float(data.get('epsilon', data.get('eps', 0.0))))
        raise InvalidDistributionError(
            "expected either 'support'/'probs' or 'L'/'epsilon' keys")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding='utf-8'))

    def to_dict(self):
        return {'support': list(self.support), 'probs': list(self.probs)}

    @property
    def L(self):
        """Largest jump in the support."""
        return self.support[-1]

    @property
    def lowest(self):
        return self.support[0]

    def pmf(self, k):
        for jump, p in zip(self.support, self.probs):
            if jump == k:
                return p
        return 0.0

    @cached_property
    def _tails(self):
        tails = {}
        for j in range(-1, self.L + 2):
            if j <= self.lowest:
                tails[j] = 1.0
            else:
                tails[j] = math.fsum(p for k, p in zip(self.support, self.probs) if k >= j)
        return tails

    def tail(self, j):
        """Q(j): probability of a jump of at least ``j``."""
        if j <= self.lowest:
            return 1.0
        if j > self.L:
            return 0.0
        return self._tails[j]

    @cached_property
    def ascending_tails(self):
        """``[Q(L+1), Q(L), ..., Q(-1)]``, the bisection table used by sampling."""
        return tuple(self.tail(j) for j in range(self.L + 1, -2, -1))

    @cached_property
    def mean(self):
        return math.fsum(k * p for k, p in zip(self.support, self.probs))

    def check_assumptions(self):
        """Validate the standing hypotheses on an excited law.

        The support must hold at least two jumps, its infimum must be -1 and
        the mean must be non-negative.
        """
        if len(self.support) < 2:
            raise InvalidDistributionError(
                f"support {list(self.support)} must contain at least two jumps")
        if self.lowest != -1:
            raise InvalidDistributionError(f"infimum of the support is {self.lowest}, expected -1")
        if self.mean < 0:
            raise InvalidDistributionError(f"mean jump {self.mean} is negative")
        return True


@dataclass(frozen=True)
class CookieEnvironment:
    """``C`` cookies per vertex; the i-th visit to a vertex consumes law ``laws[i-1]``.

    Once a vertex has no cookies left the walk uses the symmetric nearest
    neighbour coin.
    """

    laws: tuple

    def __post_init__(self):
        laws = tuple(self.laws)
        if not laws:
            raise InvalidEnvironmentError("an environment needs at least one cookie")
        for i, law in enumerate(laws, start=1):
            if not isinstance(law, JumpDistribution):
                raise InvalidEnvironmentError(f"law q_{i} is not a JumpDistribution")
            if law.mean < 0:
                raise InvalidEnvironmentError(f"law q_{i} has negative mean {law.mean}")
        supports = {law.support for law in laws}
        if len(supports) > 1:
            raise InvalidEnvironmentError(
                f"excited laws must share one support, got {sorted(supports)}")
        object.__setattr__(self, 'laws', laws)

    @classmethod
    def one_cookie(cls, law):
        return cls((law,))

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(JumpDistribution.from_json(entry) for entry in data['laws']))

    def to_dict(self):
        return {'C': self.C, 'laws': [law.to_dict() for law in self.laws]}

    @property
    def C(self):
        return len(self.laws)

    @property
    def L(self):
        return self.laws[0].L

    def law_for_visit(self, n):
        """Law used when leaving a vertex on its ``n``-th visit, or None once eaten."""
        if n < 1:
            raise ValueError(f"visit numbers start at 1, got {n}")
        return self.laws[n - 1] if n <= self.C else None

    def digest(self):
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()[:16]
