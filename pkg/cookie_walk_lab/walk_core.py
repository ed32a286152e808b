"""Simulation of the long-range cookie random walk.

A walk is driven by one uniform per step. Leaving a vertex on its n-th visit
with n <= C, the jump is sampled from q_n by inverse tail lookup; afterwards
the walk steps +1 when the uniform is at most 1/2 and -1 otherwise.
"""

import json
import logging
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distributions import CookieEnvironment
from .errors import InvalidPathError, PreconditionError
from .uniforms import UniformSource

logger = logging.getLogger(__name__)

TRAJECTORY_FORMAT = 'cookie-walk-lab trajectory'
TRAJECTORY_VERSION = 1

_CHUNK = 1 << 16


def sample_jump(q, u):
    """Return the jump ``j`` with ``Q(j) >= u > Q(j+1)``, so a tie at ``Q(j)`` picks ``j``."""
    if not 0.0 < u < 1.0:
        raise PreconditionError(f"uniform must lie in (0, 1), got {u}")
    return q.L + 1 - bisect_left(q.ascending_tails, u)


def coin(u):
    """The symmetric nearest-neighbour step used once a vertex is out of cookies."""
    return 1 if u <= 0.5 else -1


@dataclass
class WalkState:
    """Mutable walk state; ``visits`` counts occupations including the present one."""

    position: int = 0
    time: int = 0
    visits: dict = field(default_factory=lambda: {0: 1})
    running_max: int = 0
    running_min: int = 0

    def cookies_at(self, env, vertex):
        # the present vertex keeps its cookie until the walk leaves it
        departures = self.visits.get(vertex, 0) - (vertex == self.position)
        return max(env.C - departures, 0)

    def step(self, env, u):
        n = self.visits[self.position]
        law = env.law_for_visit(n)
        jump = sample_jump(law, u) if law is not None else coin(u)
        self.position += jump
        self.time += 1
        self.visits[self.position] = self.visits.get(self.position, 0) + 1
        self.running_max = max(self.running_max, self.position)
        self.running_min = min(self.running_min, self.position)
        return self


def step(state, env, u):
    """Advance ``state`` by one step in place and return it."""
    return state.step(env, u)


@dataclass(frozen=True, eq=False)
class Trajectory:
    positions: np.ndarray
    seed: int
    env: CookieEnvironment
    replica: int = 0

    @property
    def horizon(self):
        return len(self.positions) - 1

    @property
    def increments(self):
        return np.diff(self.positions)

    @property
    def source(self):
        return UniformSource(self.seed, self.replica)

    def uniforms(self):
        return self.source.block(0, self.horizon)

    def occupation_numbers(self):
        """For each t, the number of s <= t with ``Y_s == Y_t``."""
        positions = self.positions
        order = np.argsort(positions, kind='stable')
        ordered = positions[order]
        starts = np.ones(len(ordered), dtype=bool)
        starts[1:] = ordered[1:] != ordered[:-1]
        group_start = np.maximum.accumulate(np.where(starts, np.arange(len(ordered)), 0))
        occupation = np.empty(len(ordered), dtype=np.int64)
        occupation[order] = np.arange(len(ordered)) - group_start + 1
        return occupation

    def first_visit_mask(self):
        mask = np.zeros(len(self.positions), dtype=bool)
        _, first = np.unique(self.positions, return_index=True)
        mask[first] = True
        return mask

    def departures_on_visit(self, n):
        """Increments taken when leaving a vertex on its ``n``-th visit."""
        occupation = self.occupation_numbers()[:-1]
        return self.increments[occupation == n]

    def visit_counts(self):
        vertices, counts = np.unique(self.positions, return_counts=True)
        return dict(zip(vertices.tolist(), counts.tolist()))


def simulate(env, seed, horizon, replica=0):
    """Run ``horizon`` steps from 0 with the stream of ``(seed, replica)``."""
    if horizon < 0:
        raise PreconditionError(f"horizon must be non-negative, got {horizon}")
    source = UniformSource(seed, replica)
    positions = np.zeros(horizon + 1, dtype=np.int64)
    if horizon == 0:
        return Trajectory(positions, seed, env, replica)

    tables = [(law.ascending_tails, law.L + 1) for law in env.laws]
    C = env.C
    visits = {0: 1}
    y = 0
    t = 1
    for chunk in source.chunks(horizon, _CHUNK):
        buffer = []
        append = buffer.append
        for u in chunk:
            n = visits[y]
            if n <= C:
                tails, top = tables[n - 1]
                y += top - bisect_left(tails, u)
            elif u <= 0.5:
                y += 1
            else:
                y -= 1
            visits[y] = visits.get(y, 0) + 1
            append(y)
        positions[t:t + len(buffer)] = buffer
        t += len(buffer)
    logger.debug("replica %d: %d steps, final position %d, %d distinct vertices",
                 replica, horizon, y, len(visits))
    return Trajectory(positions, seed, env, replica)


def range_at(traj, t):
    """Set of vertices visited at times ``0..t``."""
    if not 0 <= t <= traj.horizon:
        raise PreconditionError(f"time {t} outside [0, {traj.horizon}]")
    return set(traj.positions[:t + 1].tolist())


def range_sizes(traj):
    """``|R_t|`` for every t."""
    return np.cumsum(traj.first_visit_mask())


def jump_over_range_violations(traj):
    """Times t where the walk returned to a visited vertex by jumping over a fresh one."""
    seen = {0}
    violations = []
    path = traj.positions.tolist()
    for t in range(1, len(path)):
        before, after = path[t - 1], path[t]
        if after in seen and before < after:
            if any(v not in seen for v in range(before, after + 1)):
                violations.append(t)
        seen.add(after)
    return violations


def ssrw_shadow(traj):
    """Simple symmetric walk driven by the uniforms of ``traj``."""
    steps = np.where(traj.uniforms() <= 0.5, 1, -1).astype(np.int64)
    shadow = np.zeros(traj.horizon + 1, dtype=np.int64)
    np.cumsum(steps, out=shadow[1:])
    return shadow


def shadow_domination_violations(traj):
    """Steps whose increment falls below the coin of the same uniform."""
    coins = np.where(traj.uniforms() <= 0.5, 1, -1)
    return np.flatnonzero(traj.increments < coins).tolist()


def trajectory_header(traj):
    return {
        'format': TRAJECTORY_FORMAT,
        'version': TRAJECTORY_VERSION,
        'seed': traj.seed,
        'replica': traj.replica,
        'horizon': traj.horizon,
        'env': traj.env.to_dict(),
        'env_hash': traj.env.digest(),
    }


def dump_trajectory(traj, path):
    """Write a JSON header line followed by little-endian int32 increments."""
    path = Path(path)
    header = json.dumps(trajectory_header(traj), sort_keys=True)
    with open(path, 'wb') as fh:
        fh.write(header.encode('utf-8'))
        fh.write(b'\n')
        fh.write(traj.increments.astype('<i4').tobytes())
    return path


def load_trajectory(path):
    raw = Path(path).read_bytes()
    head, sep, body = raw.partition(b'\n')
    if not sep:
        raise InvalidPathError(f"{path}: missing trajectory header")
    header = json.loads(head.decode('utf-8'))
    if header.get('format') != TRAJECTORY_FORMAT:
        raise InvalidPathError(f"{path}: not a trajectory file")
    env = CookieEnvironment.from_dict(header['env'])
    if env.digest() != header['env_hash']:
        raise InvalidPathError(f"{path}: environment hash mismatch")
    increments = np.frombuffer(body, dtype='<i4').astype(np.int64)
    if len(increments) != header['horizon']:
        raise InvalidPathError(
            f"{path}: expected {header['horizon']} increments, found {len(increments)}")
    positions = np.zeros(len(increments) + 1, dtype=np.int64)
    np.cumsum(increments, out=positions[1:])
    return Trajectory(positions, header['seed'], env, header['replica'])
