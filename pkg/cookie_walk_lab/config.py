"""Experiment configuration: built-in defaults, user defaults file, JSON file, flags."""

import configparser
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .distributions import CookieEnvironment, JumpDistribution
from .errors import ConfigError, CookieWalkError

logger = logging.getLogger(__name__)

WORKERS_ENV = 'COOKIE_WALK_LAB_WORKERS'
FORMATS = ('table', 'json', 'csv')
DEFAULT_FORMATS = {'criteria': 'json', 'couple': 'json', 'verify-lemmas': 'json', 'sweep': 'csv'}
SUBCOMMANDS = ('criteria', 'simulate', 'speed', 'couple', 'verify-lemmas', 'sweep')

# Keys the user defaults file may set, with their types.
USER_KEYS = {
    'replicas': int,
    'horizon': int,
    'seed': int,
    'guard': int,
    'level': float,
    'workers': int,
    'archive_dir': str,
}


def user_config_dir():
    return Path.home() / '.cookie-walk-lab'


def user_config_path():
    return user_config_dir() / 'config'


def parse_family(text):
    """Parse ``"L=15,eps=0.01"`` into a distribution spec ``{"L": 15, "epsilon": 0.01}``.

    ``eps`` may be left out when a sweep supplies the epsilons.
    """
    spec = {}
    for part in text.split(','):
        if not part.strip():
            continue
        key, sep, value = part.partition('=')
        key = key.strip().lower()
        if not sep:
            raise ConfigError('family', f"expected key=value, got {part!r}")
        try:
            if key == 'l':
                spec['L'] = int(value)
            elif key in ('eps', 'epsilon'):
                spec['epsilon'] = float(value)
            else:
                raise ConfigError('family', f"unknown key {key!r}")
        except ValueError as e:
            raise ConfigError('family', f"bad value for {key}: {value!r}") from e
    if 'L' not in spec:
        raise ConfigError('family', "needs L")
    return spec


def parse_eps_range(text):
    """``"start:stop:step"`` (stop included) or a comma separated list."""
    try:
        if ':' in text:
            start, stop, step = (float(v) for v in text.split(':'))
            if step <= 0:
                raise ConfigError('eps', "step must be positive")
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 12) for i in range(max(count, 0))]
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError as e:
        raise ConfigError('eps', f"cannot parse {text!r}") from e


def read_user_defaults(path=None):
    """Typed values from the ``[defaults]`` section of the user defaults file."""
    path = user_config_path() if path is None else Path(path)
    values = {}
    if path.exists():
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as e:
            raise ConfigError('defaults', f"cannot read {path}: {e}") from e
        if parser.has_section('defaults'):
            for key, kind in USER_KEYS.items():
                raw = parser['defaults'].get(key)
                if raw is None:
                    continue
                try:
                    values[key] = kind(raw)
                except ValueError as e:
                    raise ConfigError(key, f"bad value {raw!r} in {path}") from e
    env_workers = os.environ.get(WORKERS_ENV)
    if env_workers and 'workers' not in values:
        try:
            values['workers'] = int(env_workers)
        except ValueError as e:
            raise ConfigError('workers', f"{WORKERS_ENV}={env_workers!r} is not an integer") from e
    return values


def load_json_config(path):
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except OSError as e:
        raise ConfigError('config', f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError('config', f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError('config', f"{path} must hold a JSON object")
    return data


@dataclass
class ExperimentConfig:
    subcommand: str = 'criteria'
    distribution: dict = field(default_factory=lambda: {'L': 15, 'epsilon': 0.01})
    cookies: int = 1
    c: int = None
    ell: int = None
    replicas: int = 100
    horizon: int = 1_000_000
    seed: int = 0
    guard: int = None
    level: float = 0.99
    eps: list = None
    sequenced: bool = True
    ci: str = 'mean'
    workers: int = 1
    out: str = None
    format: str = None
    archive_dir: str = None

    def law(self):
        try:
            return JumpDistribution.from_json(self.distribution)
        except CookieWalkError as e:
            raise ConfigError('distribution', str(e)) from e

    def environment(self):
        try:
            return CookieEnvironment((self.law(),) * self.cookies)
        except CookieWalkError as e:
            raise ConfigError('distribution', str(e)) from e

    def validate(self):
        """Check every field before any simulation starts; returns self."""
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError('subcommand', f"unknown subcommand {self.subcommand!r}")
        if self.format is None:
            self.format = DEFAULT_FORMATS.get(self.subcommand, 'table')
        family = 'L' in self.distribution and not {'support', 'probs'} & set(self.distribution)
        if family and not {'epsilon', 'eps'} & set(self.distribution) and self.subcommand != 'sweep':
            raise ConfigError('family', "needs eps unless sweep supplies --eps")
        if self.cookies < 1:
            raise ConfigError('cookies', "at least one cookie per vertex is required")
        q = self.law()
        self.environment()
        for name in ('replicas', 'horizon', 'workers'):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        if self.seed < 0:
            raise ConfigError('seed', f"must be non-negative, got {self.seed}")
        if self.guard is not None and self.guard < 1:
            raise ConfigError('guard', f"must be >= 1, got {self.guard}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError('level', f"must lie in (0, 1), got {self.level}")
        if self.format not in FORMATS:
            raise ConfigError('format', f"must be one of {', '.join(FORMATS)}")
        if self.ci not in ('mean', 'percentile'):
            raise ConfigError('ci', f"must be 'mean' or 'percentile', got {self.ci!r}")
        if (self.c is None) != (self.ell is None):
            raise ConfigError('c' if self.c is None else 'ell', "c and ell are given together")
        if self.c is not None:
            if self.c < 3:
                raise ConfigError('c', f"must be >= 3, got {self.c}")
            if self.ell < 3 * self.c:
                raise ConfigError('ell', f"must be >= 3c = {3 * self.c}, got {self.ell}")
        if self.subcommand == 'couple':
            if self.c is None:
                raise ConfigError('c', "couple needs --c and --ell")
            if self.cookies != 1:
                raise ConfigError('cookies', "the coupling is built for one cookie per vertex")
            if q.tail(1) <= 0.5:
                raise ConfigError('distribution', f"couple needs Q(1) > 1/2, got {q.tail(1):.6g}")
        if self.subcommand == 'sweep':
            if not self.eps:
                raise ConfigError('eps', "sweep needs an epsilon range")
            if any(not 0.0 <= e <= 1.0 for e in self.eps):
                raise ConfigError('eps', "epsilons must lie in [0, 1]")
            if 'L' not in self.distribution:
                raise ConfigError('family', "sweep needs a two-atom family (--family L=..,eps=..)")
            if not {'epsilon', 'eps'} & set(self.distribution):
                self.distribution['epsilon'] = min(self.eps)
        return self

    def to_dict(self):
        return asdict(self)

    def digest(self):
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()[:8]


def _known(values):
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")
    return values


def resolve_config(subcommand, flags=None, config_path=None, defaults_path=None):
    """Merge built-in defaults < user defaults file < JSON config < flags.

    Flags whose value is None are treated as not given.
    """
    merged = {'subcommand': subcommand}
    merged.update(read_user_defaults(defaults_path))
    if config_path is not None:
        merged.update(_known(load_json_config(config_path)))
        logger.info("loaded experiment config from %s", config_path)
    merged.update(_known({k: v for k, v in (flags or {}).items() if v is not None}))
    merged['subcommand'] = subcommand
    return ExperimentConfig(**merged).validate()
