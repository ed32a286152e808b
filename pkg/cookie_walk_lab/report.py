"""Run reports: JSON and CSV emission plus console tables."""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

import numpy as np
from tabulate import tabulate

from . import __version__

SCHEMA_LINE = '# cookie-walk-lab schema v1'


def format_duration(seconds):
    """Compact age-style duration: ``1d 2h``, ``3h 5m``, ``4m 10s`` or ``12.3s``."""
    if seconds < 60:
        return f"{seconds:.1f}s"
    total = int(seconds)
    days, rest = divmod(total, 86400)
    hours, rest = divmod(rest, 3600)
    minutes, secs = divmod(rest, 60)
    if days > 0:
        return f"{days}d {hours}h"
    elif hours > 0:
        return f"{hours}h {minutes}m"
    else:
        return f"{minutes}m {secs}s"


def to_jsonable(value):
    """Convert numpy scalars, enums, tuples and non-finite floats for JSON output."""
    if isinstance(value, dict):
        return {str(k.value if isinstance(k, Enum) else k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if hasattr(value, 'to_dict'):
        return to_jsonable(value.to_dict())
    return value


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ''


@dataclass
class RunReport:
    subcommand: str
    config: dict
    results: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    generated_at: str = field(
        default_factory=lambda: datetime.now(timezone.utc).strftime('%Y-%m-%dT%H:%M:%SZ'))
    wall_time: float = 0.0
    version: str = __version__

    def check(self, name, passed, detail=''):
        self.checks.append(Check(name, bool(passed), detail))
        return passed

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def to_dict(self):
        return to_jsonable({
            'subcommand': self.subcommand,
            'version': self.version,
            # the only field that varies between runs of the same config
            'wall_time': {'seconds': self.wall_time, 'started_at': self.generated_at},
            'passed': self.passed,
            'config': self.config,
            'checks': [{'name': c.name, 'passed': c.passed, 'detail': c.detail} for c in self.checks],
            'results': self.results,
            'rows': self.rows,
        })

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self):
        """Rows as CSV under a schema comment line; nested values are JSON encoded."""
        buffer = io.StringIO()
        buffer.write(SCHEMA_LINE + '\n')
        rows = to_jsonable(self.rows)
        if rows:
            headers = list(rows[0])
            for row in rows[1:]:
                headers.extend(k for k in row if k not in headers)
            writer = csv.DictWriter(buffer, fieldnames=headers, lineterminator='\n')
            writer.writeheader()
            for row in rows:
                writer.writerow({k: json.dumps(v) if isinstance(v, (dict, list)) else v
                                 for k, v in row.items()})
        return buffer.getvalue()

    def render(self, fmt):
        if fmt == 'json':
            return self.to_json()
        if fmt == 'csv':
            return self.to_csv()
        return render_table(self.rows)

    def write(self, path, fmt):
        text = self.render('json' if fmt == 'table' else fmt)
        Path(path).write_text(text if text.endswith('\n') else text + '\n', encoding='utf-8')
        return path


def _cell(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, bool):
        return '✓' if value else '✗'
    return value


def render_table(rows, headers=None):
    if not rows:
        return ''
    headers = headers or list(rows[0])
    data = [[_cell(row.get(h)) for h in headers] for row in rows]
    return tabulate(data, headers=headers, tablefmt='fancy_grid')
