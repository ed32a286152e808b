"""Counter-based uniform streams.

Every uniform used by the package is a pure function of a key (derived from
the master seed, a replica index and a domain tag) and a position. The bits
come from numpy's Philox4x64 generator, which is counter based: a block of
four 64-bit words depends only on (key, counter). Streams can therefore be
sliced at any offset, replayed, and split across worker processes without
shared state.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

logger = logging.getLogger(__name__)

# Philox4x64 yields four words per counter value.
LANES = 4

# Domain tags keep the walk, arrow and oracle streams of one seed disjoint.
WALK_DOMAIN = 0
ARROW_DOMAIN = 1
ORACLE_DOMAIN = 2

_MASK64 = (1 << 64) - 1
_SCALE = 2.0 ** -52


def derive_key(seed, replica=0, domain=WALK_DOMAIN):
    """Return the 128-bit Philox key for ``(seed, replica, domain)``."""
    if seed < 0 or replica < 0:
        raise ValueError("seed and replica must be non-negative")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replica), int(domain)))
    return sequence.generate_state(2, dtype=np.uint64)


def bits_to_unit(bits):
    """Map raw 64-bit words to floats in the open interval (0, 1).

    The top 52 bits are kept and offset by one half, so 0, 1 and 1/2 are
    never produced.
    """
    top = (np.asarray(bits, dtype=np.uint64) >> np.uint64(12)).astype(np.float64)
    return (top + 0.5) * _SCALE


def zigzag(j):
    """Bijection from Z onto the non-negative integers."""
    return 2 * j if j >= 0 else -2 * j - 1


def _raw_words(key, counter, count):
    generator = np.random.Philox(key=key, counter=counter & ((1 << 256) - 1))
    return generator.random_raw(count)


@dataclass(frozen=True)
class UniformSource:
    """The stream (zeta_t) driving one replica.

    ``at(t)`` and ``block(start, n)[i] == at(start + i)`` hold for every
    offset, which is what makes trajectories bit-reproducible.
    """

    seed: int
    replica: int = 0
    domain: int = WALK_DOMAIN

    def __post_init__(self):
        if not 0 <= self.seed <= _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.replica < 0:
            raise ValueError(f"replica must be non-negative, got {self.replica}")

    @cached_property
    def key(self):
        return derive_key(self.seed, self.replica, self.domain)

    def block(self, start, n):
        """Uniforms with stream indices ``start .. start + n - 1``."""
        if start < 0 or n < 0:
            raise ValueError("start and n must be non-negative")
        if n == 0:
            return np.empty(0, dtype=np.float64)
        first, skip = divmod(start, LANES)
        words = _raw_words(self.key, first, skip + n)
        return bits_to_unit(words[skip:])

    def at(self, t):
        return float(self.block(t, 1)[0])

    def chunks(self, total, chunk_size=1 << 16):
        """Yield ``total`` uniforms as consecutive Python lists."""
        generator = np.random.Philox(key=self.key, counter=0)
        produced = 0
        while produced < total:
            size = min(chunk_size, total - produced)
            yield bits_to_unit(generator.random_raw(size)).tolist()
            produced += size

    def stream(self, chunk_size=4096):
        """Endless iterator over the stream from index 0."""
        generator = np.random.Philox(key=self.key, counter=0)
        while True:
            yield from bits_to_unit(generator.random_raw(chunk_size)).tolist()

    def spawn(self, replica):
        return UniformSource(self.seed, replica, self.domain)


@dataclass(frozen=True)
class ArrowUniforms:
    """One uniform per arrow index ``(j, k)``, ``k >= 1``.

    Arrows ``4b+1 .. 4b+4`` of stack ``j`` are the four lanes of Philox counter
    ``zigzag(j) + b * 2**64``. Consecutive vertices therefore sit on
    consecutive counters and are fetched a page at a time; the value of an
    arrow never depends on the order of queries.
    """

    seed: int
    replica: int = 0
    page_size: int = 4096

    @cached_property
    def key(self):
        return derive_key(self.seed, self.replica, ARROW_DOMAIN)

    def locate(self, j, k):
        """``(band, page, offset)`` of arrow ``(j, k)``."""
        if k < 1:
            raise ValueError(f"arrow index k must be >= 1, got {k}")
        band, lane = divmod(k - 1, LANES)
        page, slot = divmod(zigzag(j), self.page_size)
        return band, page, slot * LANES + lane

    def page(self, band, page):
        counter = (band << 64) | (page * self.page_size)
        return bits_to_unit(_raw_words(self.key, counter, self.page_size * LANES))

    def uniform(self, j, k):
        band, page, offset = self.locate(j, k)
        return float(self.page(band, page)[offset])
