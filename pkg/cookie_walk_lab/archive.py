"""Timestamped archival copies of resolved experiment configs."""

import json
from datetime import datetime
from pathlib import Path

from .config import user_config_dir


def archive_dir(config):
    if config.archive_dir:
        return Path(config.archive_dir).expanduser()
    return user_config_dir() / 'archive'


def archive_config(config):
    """
    Write the resolved config to a timestamped JSON file.

    Args:
        config: A validated ExperimentConfig

    Returns:
        dict: Result with success status and the archive file path
    """
    directory = archive_dir(config)
    try:
        directory.mkdir(parents=True, exist_ok=True)

        timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
        filename = f'config_{config.subcommand}_{config.digest()}_{timestamp}.json'
        path = directory / filename

        with open(path, 'w', encoding='utf-8') as f:
            json.dump(config.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')

        # Owner read/write only
        path.chmod(0o600)

        return {
            'success': True,
            'archive_file': str(path)
        }

    except OSError as e:
        return {
            'success': False,
            'message': f'Failed to archive config: {e}'
        }
